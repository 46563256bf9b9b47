"""Recurrent encoder-decoder autoencoder with attention over playlists.

The encoder is a stack of LSTM or GRU layers, optionally bidirectional
(timestep states are forward and backward outputs concatenated).  The
decoder is a stack of the same cell kind, initialised from the encoder's
final per-layer states.  At every decoder step the previous top-layer
decoder state scores all encoder timestep states, the softmax of the
scores weights them into a context vector, and that context is fed both
into the first decoder layer (next to the previous token's embedding) and
into the output projection.

A playlist's embedding is the top encoder layer's final state (forward and
backward finals concatenated when bidirectional).
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .corpus import BOS, EOS, PAD, UNK, Corpus, Playlist, Vocabulary, build_vocab
from .nncore import (
    AdamConfig, Parameter, RecurrentCellParams, adam_update, batch_softmax_cross_entropy,
    clip_grad_norm, gru_backward, gru_forward, init_uniform, init_zeros, load_tensors,
    log_softmax, lstm_backward, lstm_forward, save_tensors, sgd_update, softmax,
)

log = logging.getLogger(__name__)

NEG_INF = -1e30


@dataclass
class Seq2seqConfig:
    layers: int = 3
    hidden: int = 64
    cell: str = "gru"
    bidirectional: bool = False
    attention: str = "general"
    max_len: int = 50
    vocab_min_count: int = 20
    epochs: int = 15
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    optimizer: str = "adam"
    max_grad_norm: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.cell = self.cell.lower()
        if self.cell not in ("lstm", "gru"):
            raise ValueError(f"unknown cell {self.cell!r}")
        if self.attention not in ("general", "additive"):
            raise ValueError(f"unknown attention {self.attention!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.layers < 1 or self.hidden < 1:
            raise ValueError("layers and hidden must be positive")

    @property
    def adam(self):
        return AdamConfig(self.learning_rate, self.beta1, self.beta2, self.epsilon)


@dataclass
class EncoderStates:
    states: np.ndarray          # (B, T, enc_dim) top-layer timestep states
    mask: np.ndarray            # (B, T) 1.0 on real tokens
    finals: list                # per layer: list over directions of (h, c|None)


@dataclass
class AttentionStep:
    scores: np.ndarray
    weights: np.ndarray
    context: np.ndarray


@dataclass
class DecoderState:
    h: list
    c: list


def attention_weights(scores, mask=None):
    """Softmax over encoder positions, padded positions excluded."""
    scores = np.asarray(scores)
    if mask is not None:
        scores = np.where(mask > 0, scores, NEG_INF)
    return softmax(scores, axis=-1)


class Seq2seqNet:
    """Parameters plus batched forward/backward passes."""

    def __init__(self, cfg: Seq2seqConfig, vocab_size: int, dtype=np.float32, rng=None):
        self.cfg = cfg
        self.V = vocab_size
        self.dtype = dtype
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        H, E, L = cfg.hidden, cfg.hidden, cfg.layers
        self.ndir = 2 if cfg.bidirectional else 1
        self.enc_dim = H * self.ndir
        p = {}
        p["enc_emb"] = Parameter(rng.uniform(-0.1, 0.1, (vocab_size, E)).astype(dtype))
        p["dec_emb"] = Parameter(rng.uniform(-0.1, 0.1, (vocab_size, E)).astype(dtype))
        self.enc_cells = []
        for l in range(L):
            n_in = E if l == 0 else self.enc_dim
            row = []
            for d in range(self.ndir):
                cell = RecurrentCellParams.create(cfg.cell, n_in, H, rng, dtype)
                for k, v in cell.params().items():
                    p[f"enc{l}.{d}.{k}"] = v
                row.append(cell)
            self.enc_cells.append(row)
        self.dec_cells = []
        for l in range(L):
            n_in = E + self.enc_dim if l == 0 else H
            cell = RecurrentCellParams.create(cfg.cell, n_in, H, rng, dtype)
            for k, v in cell.params().items():
                p[f"dec{l}.{k}"] = v
            self.dec_cells.append(cell)
        if self.ndir == 2:
            for l in range(L):
                p[f"bridge{l}.h.W"] = init_uniform(rng, (2 * H, H), 2 * H, dtype)
                p[f"bridge{l}.h.b"] = init_zeros((H,), dtype)
                if cfg.cell == "lstm":
                    p[f"bridge{l}.c.W"] = init_uniform(rng, (2 * H, H), 2 * H, dtype)
                    p[f"bridge{l}.c.b"] = init_zeros((H,), dtype)
        if cfg.attention == "general":
            p["att.W"] = init_uniform(rng, (H, self.enc_dim), H, dtype)
        else:
            A = H
            p["att.Ws"] = init_uniform(rng, (H, A), H, dtype)
            p["att.Uh"] = init_uniform(rng, (self.enc_dim, A), self.enc_dim, dtype)
            p["att.b"] = init_zeros((A,), dtype)
            p["att.v"] = init_uniform(rng, (A,), A, dtype)
        p["out.W"] = init_uniform(rng, (H + self.enc_dim, vocab_size), H + self.enc_dim, dtype)
        p["out.b"] = init_zeros((vocab_size,), dtype)
        self.params = p

    @property
    def lstm(self):
        return self.cfg.cell == "lstm"

    # ------------------------------------------------------------ cells

    def _cell_fwd(self, x, h, c, cell):
        if self.lstm:
            return lstm_forward(x, h, c, cell)
        hn, cache = gru_forward(x, h, cell)
        return hn, None, cache

    def _cell_bwd(self, dh, dc, cache, cell):
        if self.lstm:
            return lstm_backward(dh, dc, cache, cell)
        dx, dhp = gru_backward(dh, cache, cell)
        return dx, dhp, None

    # ------------------------------------------------------------ encoder

    def encode(self, src, lengths, keep_cache=False):
        B, T = src.shape
        H = self.cfg.hidden
        dt = self.dtype
        mask = (np.arange(T)[None, :] < lengths[:, None]).astype(dt)
        x = self.params["enc_emb"].value[src]
        finals, caches = [], []
        for l, row in enumerate(self.enc_cells):
            outs, lfin, lcache = [], [], []
            for d, cell in enumerate(row):
                h = np.zeros((B, H), dt)
                c = np.zeros((B, H), dt) if self.lstm else None
                out = np.empty((B, T, H), dt)
                steps = range(T) if d == 0 else range(T - 1, -1, -1)
                sc = []
                for t in steps:
                    m = mask[:, t:t + 1]
                    hn, cn, cache = self._cell_fwd(x[:, t], h, c, cell)
                    h = m * hn + (1 - m) * h
                    if self.lstm:
                        c = m * cn + (1 - m) * c
                    out[:, t] = h
                    if keep_cache:
                        sc.append((t, cache))
                outs.append(out)
                lfin.append((h, c))
                lcache.append(sc)
            x = outs[0] if self.ndir == 1 else np.concatenate(outs, axis=-1)
            finals.append(lfin)
            caches.append(lcache)
        enc = EncoderStates(x, mask, finals)
        return (enc, caches) if keep_cache else enc

    def embed(self, enc: EncoderStates):
        top = enc.finals[-1]
        return np.concatenate([h for h, _ in top], axis=-1)

    def _encode_backward(self, enc, caches, d_states, d_finals):
        """d_finals: per layer list over directions of (dh, dc)."""
        mask = enc.mask
        d_out = d_states
        H = self.cfg.hidden
        for l in range(len(self.enc_cells) - 1, -1, -1):
            row = self.enc_cells[l]
            B, T = mask.shape
            n_in = row[0].input_size
            dx = np.zeros((B, T, n_in), self.dtype)
            for d, cell in enumerate(row):
                dh, dc = d_finals[l][d]
                dh = dh.copy()
                dc = dc.copy() if dc is not None else None
                dslice = d_out[:, :, d * H:(d + 1) * H]
                for t, cache in reversed(caches[l][d]):
                    m = mask[:, t:t + 1]
                    dh = dh + dslice[:, t]
                    dxt, dhp, dcp = self._cell_bwd(m * dh, m * dc if dc is not None else None, cache, cell)
                    dh = dhp + (1 - m) * dh
                    if dc is not None:
                        dc = dcp + (1 - m) * dc
                    dx[:, t] += dxt
            d_out = dx
        return d_out  # gradient w.r.t. source embeddings

    # ------------------------------------------------------------ attention

    def _att_prepare(self, enc):
        if self.cfg.attention == "additive":
            return enc.states @ self.params["att.Uh"].value
        return None

    def attend(self, q, enc, proj=None):
        P = self.params
        Hs = enc.states
        if self.cfg.attention == "general":
            u = q @ P["att.W"].value
            scores = np.einsum("bk,btk->bt", u, Hs)
            extra = u
        else:
            z = np.tanh((q @ P["att.Ws"].value)[:, None, :] + proj + P["att.b"].value)
            scores = z @ P["att.v"].value
            extra = z
        alpha = attention_weights(scores, enc.mask)
        ctx = np.einsum("bt,btk->bk", alpha, Hs)
        return AttentionStep(scores, alpha, ctx), extra

    def _attend_backward(self, dctx, q, step, extra, enc, d_states, d_proj):
        P = self.params
        Hs = enc.states
        alpha = step.weights
        dalpha = np.einsum("bk,btk->bt", dctx, Hs)
        de = alpha * (dalpha - (alpha * dalpha).sum(-1, keepdims=True))
        d_states += alpha[:, :, None] * dctx[:, None, :]
        if self.cfg.attention == "general":
            u = extra
            d_states += de[:, :, None] * u[:, None, :]
            du = np.einsum("bt,btk->bk", de, Hs)
            P["att.W"].grad += q.T @ du
            return du @ P["att.W"].value.T
        z = extra
        P["att.v"].grad += np.einsum("bt,bta->a", de, z)
        dz = de[:, :, None] * P["att.v"].value * (1 - z * z)
        dzs = dz.sum(1)
        P["att.b"].grad += dzs.sum(0)
        P["att.Ws"].grad += q.T @ dzs
        d_proj += dz
        return dzs @ P["att.Ws"].value.T

    # ------------------------------------------------------------ decoder

    def init_decoder(self, enc):
        P = self.params
        hs, cs = [], []
        for l, fin in enumerate(enc.finals):
            if self.ndir == 1:
                hs.append(fin[0][0])
                cs.append(fin[0][1])
            else:
                hcat = np.concatenate([fin[0][0], fin[1][0]], -1)
                hs.append(hcat @ P[f"bridge{l}.h.W"].value + P[f"bridge{l}.h.b"].value)
                if self.lstm:
                    ccat = np.concatenate([fin[0][1], fin[1][1]], -1)
                    cs.append(ccat @ P[f"bridge{l}.c.W"].value + P[f"bridge{l}.c.b"].value)
                else:
                    cs.append(None)
        return DecoderState(hs, cs)

    def _init_decoder_backward(self, enc, dh, dc):
        P = self.params
        H = self.cfg.hidden
        d_finals = []
        for l, fin in enumerate(enc.finals):
            if self.ndir == 1:
                d_finals.append([(dh[l], dc[l] if self.lstm else None)])
            else:
                hcat = np.concatenate([fin[0][0], fin[1][0]], -1)
                P[f"bridge{l}.h.W"].grad += hcat.T @ dh[l]
                P[f"bridge{l}.h.b"].grad += dh[l].sum(0)
                dhc = dh[l] @ P[f"bridge{l}.h.W"].value.T
                if self.lstm:
                    ccat = np.concatenate([fin[0][1], fin[1][1]], -1)
                    P[f"bridge{l}.c.W"].grad += ccat.T @ dc[l]
                    P[f"bridge{l}.c.b"].grad += dc[l].sum(0)
                    dcc = dc[l] @ P[f"bridge{l}.c.W"].value.T
                    d_finals.append([(dhc[:, :H], dcc[:, :H]), (dhc[:, H:], dcc[:, H:])])
                else:
                    d_finals.append([(dhc[:, :H], None), (dhc[:, H:], None)])
        return d_finals

    def decode_step(self, prev_tokens, state: DecoderState, enc, proj=None, keep_cache=False):
        step, extra = self.attend(state.h[-1], enc, proj)
        emb = self.params["dec_emb"].value[prev_tokens]
        x = np.concatenate([emb, step.context], -1)
        hs, cs, caches = [], [], []
        for l, cell in enumerate(self.dec_cells):
            h, c, cache = self._cell_fwd(x, state.h[l], state.c[l], cell)
            hs.append(h)
            cs.append(c)
            caches.append(cache)
            x = h
        feat = np.concatenate([hs[-1], step.context], -1)
        new = DecoderState(hs, cs)
        if keep_cache:
            return feat, new, (state.h[-1], step, extra, caches)
        return feat, new

    # ------------------------------------------------------------ full pass

    def forward(self, src, lengths, tgt_in, tgt_out, tgt_mask, backward=True):
        """Teacher-forced pass.  Returns (sum NLL, n target tokens, n correct).

        With ``backward`` the parameter gradients of the summed NLL are
        accumulated into ``Parameter.grad``.
        """
        P = self.params
        enc, enc_caches = self.encode(src, lengths, keep_cache=True)
        proj = self._att_prepare(enc)
        state = self.init_decoder(enc)
        B, To = tgt_in.shape
        feats = np.empty((B, To, self.cfg.hidden + self.enc_dim), self.dtype)
        dcaches = []
        for i in range(To):
            feat, state, cache = self.decode_step(tgt_in[:, i], state, enc, proj, keep_cache=True)
            feats[:, i] = feat
            dcaches.append(cache)
        F = feats.reshape(B * To, -1)
        logits = F @ P["out.W"].value + P["out.b"].value
        w = tgt_mask.reshape(-1)
        targets = tgt_out.reshape(-1)
        loss, dlogits, _ = batch_softmax_cross_entropy(logits, targets, w)
        correct = int(((logits.argmax(-1) == targets) * (w > 0)).sum())
        n_tok = int(w.sum())
        if not backward:
            return loss, n_tok, correct
        dlogits = dlogits.astype(self.dtype)
        P["out.W"].grad += F.T @ dlogits
        P["out.b"].grad += dlogits.sum(0)
        dfeat = (dlogits @ P["out.W"].value.T).reshape(B, To, -1)

        H, E = self.cfg.hidden, self.cfg.hidden
        L = len(self.dec_cells)
        dh = [np.zeros((B, H), self.dtype) for _ in range(L)]
        dc = [np.zeros((B, H), self.dtype) if self.lstm else None for _ in range(L)]
        d_states = np.zeros_like(enc.states)
        d_proj = np.zeros_like(proj) if proj is not None else None
        for i in range(To - 1, -1, -1):
            q, step, extra, caches = dcaches[i]
            dctx = dfeat[:, i, H:].copy()
            d_above = dfeat[:, i, :H]
            for l in range(L - 1, -1, -1):
                dx, dhp, dcp = self._cell_bwd(dh[l] + d_above, dc[l], caches[l], self.dec_cells[l])
                dh[l] = dhp
                dc[l] = dcp
                d_above = dx
            emb_grad = d_above[:, :E]
            np.add.at(P["dec_emb"].grad, tgt_in[:, i], emb_grad)
            dctx += d_above[:, E:]
            dh[L - 1] = dh[L - 1] + self._attend_backward(dctx, q, step, extra, enc, d_states, d_proj)
        if proj is not None:
            Hs = enc.states
            P["att.Uh"].grad += np.einsum("btk,bta->ka", Hs, d_proj)
            d_states += d_proj @ P["att.Uh"].value.T
        d_finals = self._init_decoder_backward(enc, dh, dc)
        d_src = self._encode_backward(enc, enc_caches, d_states, d_finals)
        np.add.at(P["enc_emb"].grad, src.reshape(-1), d_src.reshape(-1, E))
        return loss, n_tok, correct

    def zero_grad(self):
        for p in self.params.values():
            p.grad.fill(0)


# ---------------------------------------------------------------- batching

def make_batch(seqs: Sequence[np.ndarray]):
    """Pad token sequences into source / decoder-input / decoder-target arrays."""
    B = len(seqs)
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    if (lengths == 0).any():
        raise ValueError("cannot encode an empty playlist")
    T = int(lengths.max())
    src = np.full((B, T), PAD, np.int64)
    tgt_in = np.full((B, T + 1), PAD, np.int64)
    tgt_out = np.full((B, T + 1), PAD, np.int64)
    tmask = np.zeros((B, T + 1), np.float32)
    for b, s in enumerate(seqs):
        n = len(s)
        src[b, :n] = s
        tgt_in[b, 0] = BOS
        tgt_in[b, 1:n + 1] = s
        tgt_out[b, :n] = s
        tgt_out[b, n] = EOS
        tmask[b, :n + 1] = 1
    return src, lengths, tgt_in, tgt_out, tmask


def length_batches(lengths, batch_size, rng=None):
    """Index batches of similar length; batch order shuffled when rng given."""
    lengths = np.asarray(lengths)
    if rng is not None:
        perm = rng.permutation(len(lengths))
        order = perm[np.argsort(lengths[perm], kind="stable")]
    else:
        order = np.argsort(lengths, kind="stable")
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def _seqs(X):
    if isinstance(X, Corpus):
        return [p.track_ids for p in X.playlists]
    return [p.track_ids if isinstance(p, Playlist) else tuple(p) for p in X]


# ---------------------------------------------------------------- estimator

class Seq2seqAutoencoder(TransformerMixin, BaseEstimator):
    """Train on playlists as their own targets; ``transform`` returns the
    fixed-length encoder readout for each playlist.

    Playlists of ``max_len`` songs or more are left out of training but can
    be embedded at any length.
    """

    def __init__(self, layers=3, hidden=64, cell="gru", bidirectional=False, attention="general",
                 max_len=50, vocab_min_count=20, epochs=15, batch_size=64, learning_rate=1e-3,
                 beta1=0.9, beta2=0.999, epsilon=1e-8, optimizer="adam", max_grad_norm=1.0, seed=0,
                 eval_batch_size=256, verbose=False):
        self.layers = layers
        self.hidden = hidden
        self.cell = cell
        self.bidirectional = bidirectional
        self.attention = attention
        self.max_len = max_len
        self.vocab_min_count = vocab_min_count
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.optimizer = optimizer
        self.max_grad_norm = max_grad_norm
        self.seed = seed
        self.eval_batch_size = eval_batch_size
        self.verbose = verbose

    @classmethod
    def from_config(cls, cfg: Seq2seqConfig, **kw):
        return cls(**asdict(cfg), **kw)

    def config(self) -> Seq2seqConfig:
        names = Seq2seqConfig.__dataclass_fields__
        return Seq2seqConfig(**{k: v for k, v in self.get_params().items() if k in names})

    # ------------------------------------------------------------ training

    def _encode_seqs(self, seqs):
        return [self.vocab_.encode(s) for s in seqs]

    def fit(self, X, y=None):
        cfg = self.config()
        seqs = [s for s in _seqs(X) if 0 < len(s) < cfg.max_len]
        if not seqs:
            raise ValueError(f"no training playlist shorter than max_len={cfg.max_len}")
        train = Corpus(tuple(Playlist(str(i), s) for i, s in enumerate(seqs)), {}, "filtered")
        self.vocab_ = build_vocab(train, cfg.vocab_min_count)
        rng = np.random.default_rng(cfg.seed)
        self.net_ = Seq2seqNet(cfg, len(self.vocab_), np.float32, rng)
        data = self._encode_seqs(seqs)
        lengths = np.array([len(s) for s in data])
        self.n_train_ = len(data)
        self.perplexity_log_ = [self._perplexity_encoded(data)]
        self.accuracy_log_ = []
        params = list(self.net_.params.values())
        for ep in range(cfg.epochs):
            t0 = time.time()
            tot, ntok, ncor = 0.0, 0, 0
            for idx in length_batches(lengths, cfg.batch_size, rng):
                batch = make_batch([data[i] for i in idx])
                self.net_.zero_grad()
                loss, n, corr = self.net_.forward(*batch)
                tot += loss
                ntok += n
                ncor += corr
                for p in params:
                    p.grad /= n
                clip_grad_norm([p.grad for p in params], cfg.max_grad_norm)
                for p in params:
                    if cfg.optimizer == "adam":
                        adam_update(p, cfg.adam)
                    else:
                        sgd_update(p, cfg.learning_rate)
            self.perplexity_log_.append(math.exp(tot / ntok))
            self.accuracy_log_.append(ncor / ntok)
            msg = "epoch %d: train perplexity %.3f, token accuracy %.4f (%.1fs)"
            args = (ep + 1, self.perplexity_log_[-1], self.accuracy_log_[-1], time.time() - t0)
            if self.verbose:
                print(msg % args, flush=True)
            log.info(msg, *args)
        return self

    # ------------------------------------------------------------ inference

    def _batched(self, data):
        lengths = np.array([len(s) for s in data])
        for idx in length_batches(lengths, self.eval_batch_size):
            yield idx, make_batch([data[i] for i in idx])

    def transform(self, X):
        check_is_fitted(self, "net_")
        data = self._encode_seqs(_seqs(X))
        if any(len(s) == 0 for s in data):
            raise ValueError("cannot embed an empty playlist")
        out = np.empty((len(data), self.net_.enc_dim), np.float32)
        for idx, (src, lengths, *_) in self._batched(data):
            out[idx] = self.net_.embed(self.net_.encode(src, lengths))
        return out

    def _perplexity_encoded(self, data):
        tot, ntok, _ = self._nll_encoded(data)
        return math.exp(tot / ntok)

    def _nll_encoded(self, data):
        tot, ntok, ncor = 0.0, 0, 0
        for _, batch in self._batched(data):
            loss, n, c = self.net_.forward(*batch, backward=False)
            tot += loss
            ntok += n
            ncor += c
        return tot, ntok, ncor

    def perplexity(self, X) -> float:
        """exp of the mean teacher-forced NLL per target token (end token included)."""
        check_is_fitted(self, "net_")
        data = self._encode_seqs(_seqs(X))
        if not data:
            raise ValueError("perplexity of an empty set")
        return self._perplexity_encoded(data)

    def token_accuracy(self, X) -> float:
        check_is_fitted(self, "net_")
        tot, ntok, ncor = self._nll_encoded(self._encode_seqs(_seqs(X)))
        return ncor / ntok

    def token_log_probs(self, seq):
        """Per-target-token log-probabilities for one playlist (teacher forced)."""
        check_is_fitted(self, "net_")
        data = self.vocab_.encode(seq)
        src, lengths, tgt_in, tgt_out, mask = make_batch([data])
        net = self.net_
        enc = net.encode(src, lengths)
        proj = net._att_prepare(enc)
        state = net.init_decoder(enc)
        out = []
        for i in range(tgt_in.shape[1]):
            feat, state = net.decode_step(tgt_in[:, i], state, enc, proj)
            logits = feat @ net.params["out.W"].value + net.params["out.b"].value
            out.append(float(log_softmax(logits.astype(np.float64))[0, tgt_out[0, i]]))
        return np.array(out)

    def encode(self, seq) -> EncoderStates:
        check_is_fitted(self, "net_")
        data = self.vocab_.encode(seq)
        if len(data) == 0:
            raise ValueError("cannot encode an empty playlist")
        src, lengths, *_ = make_batch([data])
        return self.net_.encode(src, lengths)

    # ------------------------------------------------------------ persistence

    def save(self, path):
        check_is_fitted(self, "net_")
        tensors = {k: p.value for k, p in self.net_.params.items()}
        meta = {
            "params": self.get_params(),
            "vocab": self.vocab_.ids[4:],
            "vocab_counts": [self.vocab_.counts.get(t, 0) for t in self.vocab_.ids[4:]],
            "perplexity_log": self.perplexity_log_,
            "accuracy_log": self.accuracy_log_,
        }
        save_tensors(path, tensors, meta)

    @classmethod
    def load(cls, path) -> "Seq2seqAutoencoder":
        tensors, meta = load_tensors(path)
        est = cls(**meta["params"])
        est.vocab_ = Vocabulary(meta["vocab"], dict(zip(meta["vocab"], meta["vocab_counts"])),
                                est.vocab_min_count)
        est.net_ = Seq2seqNet(est.config(), len(est.vocab_), np.float32, np.random.default_rng(0))
        for k, p in est.net_.params.items():
            p.value = tensors[k]
        est.perplexity_log_ = meta["perplexity_log"]
        est.accuracy_log_ = meta["accuracy_log"]
        return est


def train_autoencoder(c: Corpus, cfg: Seq2seqConfig | None = None, **kw) -> Seq2seqAutoencoder:
    return Seq2seqAutoencoder.from_config(cfg or Seq2seqConfig(), **kw).fit(c)


def playlist_embedding(m: Seq2seqAutoencoder, pl) -> np.ndarray:
    return m.transform([pl])[0]


def perplexity(m: Seq2seqAutoencoder, playlists) -> float:
    return m.perplexity(playlists)
