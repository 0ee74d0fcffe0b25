"""Named-parameter store and tape binding."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


class Bind:
    """Resolves dotted parameter names to tensors, caching tape leaves.

    With a tape, each parameter becomes a differentiable leaf named by its
    full dotted path (so gradients come back keyed by parameter name); with
    ``tape=None`` parameters are wrapped as constants for pure inference.
    """

    def __init__(self, params: dict[str, np.ndarray], tape: ad.Tape | None = None,
                 prefix: str = "", _cache: dict | None = None):
        self.params = params
        self.tape = tape
        self.prefix = prefix
        self._cache = _cache if _cache is not None else {}

    def sub(self, name: str) -> "Bind":
        return Bind(self.params, self.tape, f"{self.prefix}{name}.", self._cache)

    def __getitem__(self, name: str) -> ad.Tensor:
        full = self.prefix + name
        t = self._cache.get(full)
        if t is None:
            arr = self.params[full]
            t = self.tape.leaf(arr, full) if self.tape is not None else ad.Tensor(arr)
            self._cache[full] = t
        return t

    def __contains__(self, name: str) -> bool:
        return self.prefix + name in self.params

    def raw(self, name: str) -> np.ndarray:
        return self.params[self.prefix + name]


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape: tuple, dtype=np.float64) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape).astype(dtype)


def init_linear(params: dict, prefix: str, rng, d_in: int, d_out: int, dtype=np.float64):
    params[f"{prefix}.w"] = glorot_uniform(rng, d_in, d_out, (d_in, d_out), dtype)
    params[f"{prefix}.b"] = np.zeros(d_out, dtype=dtype)


def init_layer_norm(params: dict, prefix: str, dim: int, dtype=np.float64):
    params[f"{prefix}.g"] = np.ones(dim, dtype=dtype)
    params[f"{prefix}.b"] = np.zeros(dim, dtype=dtype)


def linear_bias(x, p: Bind, name: str) -> ad.Tensor:
    sub = p.sub(name)
    return ad.add(ad.linear(x, sub["w"]), sub["b"])


def layer_norm_p(x, p: Bind, name: str) -> ad.Tensor:
    sub = p.sub(name)
    return ad.layer_norm(x, sub["g"], sub["b"])
