"""Synthetic sequence-transduction corpus and the feature frontend.

Each utterance is a run of per-symbol prototype frames plus Gaussian noise;
the task is separable but non-trivial, and generation is pure given
(spec, seed).  The frontend stacks and subsamples frames and appends a
one-hot domain id, mirroring a streaming ASR feature pipeline.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

CORPUS_MAGIC = b"DCEC1"


class CorpusError(ValueError):
    pass


@dataclass
class Utterance:
    frames: np.ndarray  # (T, D) float
    labels: np.ndarray  # (U,) ints in 1..V (0 is the blank id)
    domain: int = 0


@dataclass
class CorpusSpec:
    """Generation recipe; prototypes are derived from (vocab, dim, seed)."""

    vocab: int = 8
    dim: int = 16
    frames_per_symbol: tuple[int, int] = (3, 5)
    noise: float = 0.1
    min_labels: int = 2
    max_labels: int = 8
    n_train: int = 2000
    n_dev: int = 200
    n_test: int = 200
    seed: int = 0
    n_domains: int = 1
    frontend_stack: int = 4
    frontend_factor: int = 3
    # time reduction applied by the model after the frontend; generation
    # keeps every utterance lattice-feasible for the most downsampled path
    extra_subsampling: int = 1

    def __post_init__(self):
        if self.vocab < 2:
            raise CorpusError("vocab must be >= 2")
        a, b = self.frames_per_symbol
        if a < 1 or b < a:
            raise CorpusError(f"bad frames-per-symbol range [{a}, {b}]")
        if self.min_labels < 1 or self.max_labels < self.min_labels:
            raise CorpusError("bad label-length range")

    def prototypes(self) -> np.ndarray:
        """(vocab, dim) unit-Gaussian prototype per symbol, fixed by seed."""
        rng = np.random.default_rng(np.random.SeedSequence((self.seed, 0xC0FFEE)))
        protos = rng.standard_normal((self.vocab, self.dim))
        for i in range(self.vocab):
            for j in range(i + 1, self.vocab):
                if np.array_equal(protos[i], protos[j]):
                    raise CorpusError("prototype collision (should be impossible)")
        return protos

    def frontend_frames(self, t: int) -> int:
        return -(-t // self.frontend_factor)  # ceil

    def model_frames(self, t: int) -> int:
        return -(-self.frontend_frames(t) // self.extra_subsampling)


def synth_generate(spec: CorpusSpec, n: int, seed: int | None = None) -> list[Utterance]:
    """Generate ``n`` utterances; deterministic given (spec, seed).

    Re-samples frame counts until the utterance stays lattice-feasible
    (enough frames per label after frontend and model subsampling); raises
    if the frames-per-symbol range cannot satisfy that.
    """
    if n < 1:
        raise CorpusError("n must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(
        (spec.seed if seed is None else seed, 0xDA7A)))
    protos = spec.prototypes()
    a, b = spec.frames_per_symbol
    out = []
    for _ in range(n):
        u = int(rng.integers(spec.min_labels, spec.max_labels + 1))
        labels = rng.integers(1, spec.vocab + 1, size=u).astype(np.int32)
        for attempt in range(64):
            fps = rng.integers(a, b + 1, size=u)
            if spec.model_frames(int(fps.sum())) >= u:
                break
        else:
            raise CorpusError(
                f"frames-per-symbol range [{a}, {b}] cannot keep {u} labels "
                f"feasible under subsampling x{spec.frontend_factor}"
                f"*{spec.extra_subsampling}")
        rows = np.repeat(protos[labels - 1], fps, axis=0)
        if spec.noise > 0:
            rows = rows + spec.noise * rng.standard_normal(rows.shape)
        domain = int(rng.integers(0, spec.n_domains))
        out.append(Utterance(frames=rows, labels=labels, domain=domain))
    return out


def generate_splits(spec: CorpusSpec) -> dict[str, list[Utterance]]:
    """train/dev/test splits from disjoint seeded streams."""
    return {
        "train": synth_generate(spec, spec.n_train, seed=spec.seed),
        "dev": synth_generate(spec, spec.n_dev, seed=spec.seed + 1_000_003),
        "test": synth_generate(spec, spec.n_test, seed=spec.seed + 2_000_003),
    }


# ---------------------------------------------------------------------------
# frontend

def frontend_stack_subsample(frames: np.ndarray, stack: int = 4, factor: int = 3) -> np.ndarray:
    """Concatenate ``stack`` consecutive frames, keep every ``factor``-th.

    Output row t' covers input rows [t'*factor, t'*factor + stack); rows past
    the end repeat the final frame, so T' = ceil(T / factor) exactly.
    """
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise CorpusError(f"frontend needs a non-empty (T, D) matrix, got {frames.shape}")
    if stack < 1 or factor < 1:
        raise CorpusError("stack and factor must be >= 1")
    t_in, d = frames.shape
    t_out = -(-t_in // factor)
    pad = max(0, (t_out - 1) * factor + stack - t_in)
    padded = np.concatenate([frames, np.repeat(frames[-1:], pad, axis=0)], axis=0) \
        if pad else frames
    out = np.empty((t_out, stack * d), dtype=frames.dtype)
    for tprime in range(t_out):
        base = tprime * factor
        out[tprime] = padded[base:base + stack].reshape(-1)
    return out


def append_domain_id(frames: np.ndarray, domain: int, dim: int = 16) -> np.ndarray:
    """Append a one-hot domain-id vector to every frame."""
    if not (0 <= domain < dim):
        raise CorpusError(f"domain id {domain} out of range 0..{dim - 1}")
    onehot = np.zeros((frames.shape[0], dim), dtype=frames.dtype)
    onehot[:, domain] = 1.0
    return np.concatenate([frames, onehot], axis=1)


def apply_frontend(utt: Utterance, spec: CorpusSpec, domain_dim: int = 16) -> np.ndarray:
    feats = frontend_stack_subsample(utt.frames, spec.frontend_stack, spec.frontend_factor)
    return append_domain_id(feats, utt.domain, domain_dim)


def frontend_dim(spec: CorpusSpec, domain_dim: int = 16) -> int:
    return spec.frontend_stack * spec.dim + domain_dim


# ---------------------------------------------------------------------------
# corpus file format: magic "DCEC1", header (V, D), then length-prefixed
# records (T, U, domain, float32 frames row-major, uint32 labels)

def save_corpus(path, utterances: list[Utterance], spec: CorpusSpec) -> None:
    with open(path, "wb") as fh:
        fh.write(CORPUS_MAGIC)
        fh.write(struct.pack("<II", spec.vocab, spec.dim))
        for utt in utterances:
            t, d = utt.frames.shape
            if d != spec.dim:
                raise CorpusError(f"utterance dim {d} != corpus dim {spec.dim}")
            fh.write(struct.pack("<III", t, len(utt.labels), utt.domain))
            fh.write(utt.frames.astype("<f4").tobytes())
            fh.write(utt.labels.astype("<u4").tobytes())


def load_corpus(path) -> tuple[list[Utterance], int, int]:
    """Returns (utterances, vocab, dim)."""
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != CORPUS_MAGIC:
            raise CorpusError(f"bad corpus magic {magic!r}")
        vocab, dim = struct.unpack("<II", fh.read(8))
        out = []
        while True:
            head = fh.read(12)
            if not head:
                break
            if len(head) < 12:
                raise CorpusError("truncated corpus record header")
            t, u, domain = struct.unpack("<III", head)
            fbytes = fh.read(4 * t * dim)
            lbytes = fh.read(4 * u)
            if len(fbytes) < 4 * t * dim or len(lbytes) < 4 * u:
                raise CorpusError("truncated corpus record payload")
            frames = np.frombuffer(fbytes, dtype="<f4").reshape(t, dim).astype(np.float64)
            labels = np.frombuffer(lbytes, dtype="<u4").astype(np.int32)
            out.append(Utterance(frames=frames, labels=labels, domain=domain))
    return out, vocab, dim
