"""Transducer decoder: stateless embedding prediction network, joint network,
exact lattice loss, greedy/beam decoding, and edit-distance scoring.

The lattice is monotonic: each encoder frame emits at most one label (or
blank), so a T'-frame utterance supports label sequences up to length T' and
the probabilities of all such sequences sum to exactly 1.  The loss marginal
runs over all monotonic alignments via the forward recursion; its gradient
comes from the matching backward recursion as alignment-posterior occupancies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .params import Bind, glorot_uniform, init_linear

BLANK = 0


class InfeasibleLatticeError(ValueError):
    """More labels than encoder frames: no monotonic alignment exists."""


@dataclass
class DecoderConfig:
    vocab: int
    embed_dim: int = 320
    label_context: int = 2
    joint_dim: int = 384

    def validate(self) -> None:
        if self.vocab < 1:
            raise ValueError("vocab must be >= 1")
        if self.embed_dim < 1 or self.joint_dim < 1:
            raise ValueError("embed/joint dims must be >= 1")
        if self.label_context < 0:
            raise ValueError("label_context must be >= 0")


@dataclass
class Hypothesis:
    labels: tuple[int, ...]
    log_prob: float
    context: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not self.context:
            self.context = self.labels


def init_decoder(params: dict, prefix: str, cfg: DecoderConfig, enc_dim: int,
                 rng: np.random.Generator, dtype=np.float64) -> None:
    v1 = cfg.vocab + 1
    e, c, j = cfg.embed_dim, cfg.label_context, cfg.joint_dim
    params[f"{prefix}.embed"] = glorot_uniform(rng, v1, e, (v1, e), dtype)
    init_linear(params, f"{prefix}.pred", rng, c * e, e, dtype)
    init_joint(params, prefix, cfg, enc_dim, rng, dtype)


def init_joint(params: dict, prefix: str, cfg: DecoderConfig, enc_dim: int,
               rng: np.random.Generator, dtype=np.float64,
               enc_key: str = "joint.enc.w") -> None:
    e, j, v1 = cfg.embed_dim, cfg.joint_dim, cfg.vocab + 1
    params[f"{prefix}.{enc_key}"] = glorot_uniform(rng, enc_dim, j, (enc_dim, j), dtype)
    params[f"{prefix}.joint.pred.w"] = glorot_uniform(rng, e, j, (e, j), dtype)
    params[f"{prefix}.joint.b"] = np.zeros(j, dtype=dtype)
    init_linear(params, f"{prefix}.joint.out", rng, j, v1, dtype)


def label_contexts(labels, context: int) -> np.ndarray:
    """(U+1, context) int matrix: row u holds the last ``context`` labels of
    labels[:u], left-padded with blank."""
    labels = list(labels)
    rows = []
    for u in range(len(labels) + 1):
        ctx = [BLANK] * context + labels[:u]
        rows.append(ctx[len(ctx) - context:] if context else [])
    return np.asarray(rows, dtype=np.int64).reshape(len(labels) + 1, context)


def prediction_network(contexts: np.ndarray, cfg: DecoderConfig, p: Bind):
    """(n, label_context) int contexts -> (n, embed_dim) prediction vectors."""
    n = contexts.shape[0]
    emb = ad.embedding_lookup(p["embed"], contexts)  # (n, c, e)
    flat = ad.reshape(emb, (n, cfg.label_context * cfg.embed_dim))
    sub = p.sub("pred")
    return ad.tanh(ad.add(ad.linear(flat, sub["w"]), sub["b"]))


def joint_grid(enc, pred, cfg: DecoderConfig, p: Bind, enc_key: str = "joint.enc.w"):
    """Log-probabilities over (T, U+1, vocab+1) from encoder frames and
    prediction vectors."""
    jp = p.sub("joint")
    e_proj = ad.linear(enc, p[enc_key])
    p_proj = ad.linear(pred, jp["pred.w"])
    h = ad.tanh(ad.add(ad.add_outer(e_proj, p_proj), jp["b"]))
    out = p.sub("joint.out")
    logits = ad.add(ad.linear(h, out["w"]), out["b"])
    return ad.log_softmax(logits)


def joint_network(enc_t, pred_u, cfg: DecoderConfig, p: Bind,
                  enc_key: str = "joint.enc.w"):
    """Single-cell joint: (enc_dim,), (embed_dim,) -> logits (vocab+1,)."""
    jp = p.sub("joint")
    if enc_t.shape[-1] != p[enc_key].shape[0]:
        raise ValueError(f"joint network: encoder dim {enc_t.shape[-1]} != "
                         f"{p[enc_key].shape[0]}")
    h = ad.tanh(ad.add(ad.add(ad.linear(enc_t, p[enc_key]),
                              ad.linear(pred_u, jp["pred.w"])), jp["b"]))
    out = p.sub("joint.out")
    return ad.add(ad.linear(h, out["w"]), out["b"])


# ---------------------------------------------------------------------------
# lattice loss

def _alpha_beta(lp: np.ndarray, labels) -> tuple[np.ndarray, np.ndarray, float]:
    """Forward/backward log-sums over the monotonic (T+1, U+1) lattice."""
    t_len, u1, _ = lp.shape
    u_len = len(labels)
    neg = -math.inf
    la = ad.logaddexp
    blank = lp[:, :, BLANK]
    lab = np.full((t_len, u_len), neg)
    for u in range(u_len):
        lab[:, u] = lp[:, u, labels[u]]

    alpha = np.full((t_len + 1, u1), neg)
    alpha[0, 0] = 0.0
    for t in range(1, t_len + 1):
        hi = min(t, u_len)
        for u in range(hi + 1):
            stay = alpha[t - 1, u] + blank[t - 1, u]
            take = alpha[t - 1, u - 1] + lab[t - 1, u - 1] if u > 0 else neg
            alpha[t, u] = la(stay, take)

    beta = np.full((t_len + 1, u1), neg)
    beta[t_len, u_len] = 0.0
    for t in range(t_len - 1, -1, -1):
        for u in range(min(t, u_len), -1, -1):
            stay = blank[t, u] + beta[t + 1, u]
            take = lab[t, u] + beta[t + 1, u + 1] if u < u_len else neg
            beta[t, u] = la(stay, take)

    return alpha, beta, alpha[t_len, u_len]


def rnnt_grid_loss(log_probs, labels):
    """Negative log-likelihood of ``labels`` summed over all monotonic
    alignments of a (T, U+1, vocab+1) log-probability grid.

    A single tape op: the gradient w.r.t. the grid is assembled from the
    forward/backward lattice sums (posterior occupancy of each transition).
    """
    labels = [int(v) for v in labels]
    lp = log_probs.data if isinstance(log_probs, ad.Tensor) else np.asarray(log_probs)
    t_len, u1, v1 = lp.shape
    u_len = len(labels)
    if u_len + 1 != u1:
        raise ValueError(f"grid has {u1} label contexts but {u_len} labels")
    if u_len > t_len:
        raise InfeasibleLatticeError(
            f"{u_len} labels cannot align to {t_len} frames (monotonic lattice)")
    if any(not 1 <= v <= v1 - 1 for v in labels):
        raise ValueError("labels must lie in 1..vocab")

    alpha, beta, ll = _alpha_beta(lp, labels)
    loss = np.asarray(-ll)

    def vjp(g):
        # posterior occupancy of each transition: alpha into the cell, the
        # transition's own log-prob, beta out of the successor
        occ_blank = np.exp(alpha[:t_len, :] + lp[:, :, BLANK] + beta[1:, :] - ll)
        grid = np.zeros_like(lp)
        grid[:, :, BLANK] = -occ_blank
        for u in range(u_len):
            occ = np.exp(alpha[:t_len, u] + lp[:, u, labels[u]] + beta[1:, u + 1] - ll)
            grid[:, u, labels[u]] -= occ
        return g * grid

    if not isinstance(log_probs, ad.Tensor):
        return ad.Tensor(loss)
    return ad.make_op("rnnt_grid_loss", loss, [(log_probs, vjp)])


def rnnt_loss(enc, labels, cfg: DecoderConfig, p: Bind,
              enc_key: str = "joint.enc.w"):
    """-log P(labels | encoder output), differentiable end-to-end."""
    t_len = enc.shape[0]
    if len(labels) > t_len:
        raise InfeasibleLatticeError(
            f"{len(labels)} labels cannot align to {t_len} frames")
    contexts = label_contexts(labels, cfg.label_context)
    pred = prediction_network(contexts, cfg, p)
    grid = joint_grid(enc, pred, cfg, p, enc_key)
    return rnnt_grid_loss(grid, labels)


# ---------------------------------------------------------------------------
# decoding (pure inference; no tape)

class _DecodeCache:
    """Per-utterance helper: projected encoder frames plus memoized
    prediction/joint evaluations keyed by label context."""

    def __init__(self, enc: np.ndarray, cfg: DecoderConfig, params: dict, prefix: str,
                 enc_key: str = "joint.enc.w"):
        self.cfg = cfg
        self.v1 = cfg.vocab + 1
        g = lambda name: params[f"{prefix}.{name}"]
        self.enc_proj = (enc[:, None, :] @ g(enc_key))[:, 0, :]
        self.embed = g("embed")
        self.pred_w, self.pred_b = g("pred.w"), g("pred.b")
        self.joint_pred_w, self.joint_b = g("joint.pred.w"), g("joint.b")
        self.out_w, self.out_b = g("joint.out.w"), g("joint.out.b")
        self._pred: dict[tuple, np.ndarray] = {}

    def context_of(self, labels: tuple[int, ...]) -> tuple[int, ...]:
        c = self.cfg.label_context
        ctx = (BLANK,) * c + labels
        return ctx[len(ctx) - c:] if c else ()

    def pred_proj(self, context: tuple[int, ...]) -> np.ndarray:
        out = self._pred.get(context)
        if out is None:
            emb = self.embed[list(context)].reshape(-1) if context else \
                np.zeros(0, dtype=self.embed.dtype)
            vec = np.tanh(emb @ self.pred_w + self.pred_b)
            out = self._pred[context] = vec @ self.joint_pred_w
        return out

    def log_probs(self, t: int, context: tuple[int, ...]) -> np.ndarray:
        h = np.tanh(self.enc_proj[t] + self.pred_proj(context) + self.joint_b)
        logits = h @ self.out_w + self.out_b
        m = logits.max()
        return logits - m - math.log(np.exp(logits - m).sum())


def greedy_decode(enc: np.ndarray, cfg: DecoderConfig, params: dict, prefix: str,
                  max_symbols_per_frame: int = 4,
                  enc_key: str = "joint.enc.w") -> list[int]:
    """Frame-synchronous argmax decoding.

    The monotonic lattice admits at most one symbol per frame, so
    ``max_symbols_per_frame`` never binds below 1; it is kept for interface
    stability.
    """
    cache = _DecodeCache(np.asarray(enc), cfg, params, prefix, enc_key)
    out: list[int] = []
    for t in range(len(cache.enc_proj)):
        lp = cache.log_probs(t, cache.context_of(tuple(out)))
        best = int(lp.argmax())
        if best != BLANK and max_symbols_per_frame >= 1:
            out.append(best)
    return out


def beam_search(enc: np.ndarray, cfg: DecoderConfig, params: dict, prefix: str,
                beam: int = 4, max_expand: int = 4,
                enc_key: str = "joint.enc.w") -> list[Hypothesis]:
    """Frame-synchronous beam search with log-sum-exp merging of identical
    label sequences.

    Within the kept set the scores are exact alignment sums, and the
    returned hypotheses are re-scored with the full lattice loss, so with a
    beam at least as large as the number of feasible sequences the result is
    exhaustive and exact.  Per hypothesis and frame, only the ``max_expand``
    most probable labels (plus blank) are expanded.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    enc = np.asarray(enc)
    cache = _DecodeCache(enc, cfg, params, prefix, enc_key)
    hyps: dict[tuple[int, ...], float] = {(): 0.0}
    for t in range(len(enc)):
        grown: dict[tuple[int, ...], float] = {}
        for labels, score in hyps.items():
            lp = cache.log_probs(t, cache.context_of(labels))
            cands = [BLANK] + list(np.argsort(lp[1:])[::-1][:max_expand] + 1)
            for v in cands:
                ext = labels if v == BLANK else labels + (int(v),)
                s = score + lp[v]
                prev = grown.get(ext)
                grown[ext] = s if prev is None else ad.logaddexp(prev, s)
        hyps = dict(sorted(grown.items(), key=lambda kv: -kv[1])[:beam])

    bind = Bind(params)
    rescored = []
    for labels in hyps:
        nll = rnnt_loss(ad.Tensor(enc), list(labels), cfg, bind.sub(prefix),
                        enc_key).item()
        rescored.append(Hypothesis(labels=labels, log_prob=-nll,
                                   context=_last_context(labels, cfg.label_context)))
    rescored.sort(key=lambda h: -h.log_prob)
    return rescored


def _last_context(labels: tuple[int, ...], c: int) -> tuple[int, ...]:
    ctx = (BLANK,) * c + labels
    return ctx[len(ctx) - c:] if c else ()


# ---------------------------------------------------------------------------
# scoring

def wer(ref, hyp) -> tuple[int, int, int, float]:
    """Levenshtein alignment counts (substitutions, insertions, deletions)
    and their rate over max(1, len(ref))."""
    ref, hyp = list(ref), list(hyp)
    n, m = len(ref), len(hyp)
    # cost[i][j]: (total, S, I, D) for ref[:i] vs hyp[:j]
    cost = [[(0, 0, 0, 0)] * (m + 1) for _ in range(n + 1)]
    for j in range(1, m + 1):
        cost[0][j] = (j, 0, j, 0)
    for i in range(1, n + 1):
        cost[i][0] = (i, 0, 0, i)
        for j in range(1, m + 1):
            if ref[i - 1] == hyp[j - 1]:
                cost[i][j] = cost[i - 1][j - 1]
                continue
            tsub, s, ins, d = cost[i - 1][j - 1]
            tins, s2, i2, d2 = cost[i][j - 1]
            tdel, s3, i3, d3 = cost[i - 1][j]
            best = min((tsub + 1, s + 1, ins, d),
                       (tins + 1, s2, i2 + 1, d2),
                       (tdel + 1, s3, i3, d3 + 1))
            cost[i][j] = best
    _, s, i, d = cost[n][m]
    return s, i, d, (s + i + d) / max(1, n)
