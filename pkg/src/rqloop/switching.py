"""
Intermittent observation switch.

``gamma = 1`` means the switch is OFF (state not delivered, loop open);
``gamma = 0`` means it is ON and the quantised state reaches the
controller.

Randomness
----------
All draws come from numpy ``Generator`` objects backed by PCG64 and
seeded through ``SeedSequence``. A run is identified by
``(master_seed, run_index)``; :func:`run_streams` splits it into three
independent named substreams (``switch``, ``noise``, ``init``) so that
replaying a fixed switch path leaves the noise draws untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import IllPosedError

RNG_ALGORITHM = "numpy PCG64 via SeedSequence(entropy=seed, spawn_key=(run,)) -> spawn(3)"
STREAM_NAMES = ("switch", "noise", "init")


@dataclass(frozen=True)
class SwitchModel:
    """Bernoulli(p) or two-state Markov chain with TPM ``[[1-p, p], [q, 1-q]]``.

    ``pi0`` is ``P(gamma_0 = 1)`` for the Markov chain; ``None`` selects the
    stationary probability ``p / (p + q)``.
    """

    kind: Literal["bernoulli", "markov"]
    p: float
    q: float | None = None
    pi0: float | None = None

    def __post_init__(self):
        if self.kind not in ("bernoulli", "markov"):
            raise ValueError(f"unknown switch kind {self.kind!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must be in [0, 1], got {self.p}")
        if self.kind == "markov":
            if self.q is None or not 0.0 <= self.q <= 1.0:
                raise ValueError(f"q must be in [0, 1], got {self.q}")
            if self.pi0 is not None and not 0.0 <= self.pi0 <= 1.0:
                raise ValueError(f"pi0 must be in [0, 1], got {self.pi0}")

    @classmethod
    def bernoulli(cls, p: float) -> "SwitchModel":
        return cls("bernoulli", p)

    @classmethod
    def markov(cls, p: float, q: float, pi0: float | None = None) -> "SwitchModel":
        return cls("markov", p, q, pi0)

    @property
    def transition_matrix(self) -> np.ndarray:
        if self.kind == "bernoulli":
            return np.array([[1.0 - self.p, self.p], [1.0 - self.p, self.p]])
        return np.array([[1.0 - self.p, self.p], [self.q, 1.0 - self.q]])

    @property
    def initial_pi(self) -> float:
        if self.kind == "bernoulli":
            return self.p
        if self.pi0 is not None:
            return self.pi0
        return stationary_pi(self)


def stationary_pi(model: SwitchModel) -> float:
    """Long-run probability of the switch being OFF."""
    if model.kind == "bernoulli":
        return model.p
    s = model.p + model.q
    if s == 0.0:
        raise IllPosedError("p = q = 0: the chain has no unique stationary law")
    return model.p / s


def state_distribution(model: SwitchModel, k: int) -> float:
    """``pi_k = P(gamma_k = 1)`` from ``zeta_k = zeta_0 T^k``."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if model.kind == "bernoulli":
        return model.p
    T = model.transition_matrix
    zeta = np.array([1.0 - model.initial_pi, model.initial_pi])
    for _ in range(k):
        zeta = zeta @ T
    return float(zeta[1])


def state_distribution_path(model: SwitchModel, horizon: int) -> np.ndarray:
    """``[pi_0, ..., pi_{horizon-1}]`` in one pass."""
    out = np.empty(horizon)
    if model.kind == "bernoulli":
        out.fill(model.p)
        return out
    T = model.transition_matrix
    zeta = np.array([1.0 - model.initial_pi, model.initial_pi])
    for k in range(horizon):
        out[k] = zeta[1]
        zeta = zeta @ T
    return out


def _threshold(model, prev):
    if model.kind == "bernoulli":
        return model.p
    if prev is None:
        return model.initial_pi
    return model.p if prev == 0 else 1.0 - model.q


def draw(model: SwitchModel, prev: int | None, rng: np.random.Generator, first: bool = False) -> int:
    """One switch value.

    For a Markov chain the very first draw must pass ``first=True`` (it
    uses ``pi0``); afterwards ``prev`` is mandatory.
    """
    if model.kind == "markov" and prev is None and not first:
        raise ValueError("Markov draw after k=0 needs the previous switch value")
    if prev is not None and prev not in (0, 1):
        raise ValueError(f"prev must be 0 or 1, got {prev!r}")
    return int(rng.random() < _threshold(model, None if first else prev))


def gammas_from_uniforms(model: SwitchModel, u: np.ndarray) -> np.ndarray:
    """Map uniforms of shape ``(..., N)`` to a switch path with the same shape.

    Uses exactly the rule of :func:`draw`, so a path built here matches
    ``N`` successive calls to :func:`draw` on the same stream.
    """
    u = np.asarray(u, dtype=float)
    if model.kind == "bernoulli":
        return (u < model.p).astype(np.int8)
    g = np.empty(u.shape, dtype=np.int8)
    g[..., 0] = u[..., 0] < model.initial_pi
    stay_off = 1.0 - model.q
    for k in range(1, u.shape[-1]):
        thr = np.where(g[..., k - 1] == 1, stay_off, model.p)
        g[..., k] = u[..., k] < thr
    return g


def sample_path(model: SwitchModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` successive switch values from ``rng``."""
    return gammas_from_uniforms(model, rng.random(n))


def run_streams(seed: int, run: int = 0) -> dict[str, np.random.Generator]:
    """Independent generators for one simulation run, keyed by stream name."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(run),))
    return {name: np.random.Generator(np.random.PCG64(child))
            for name, child in zip(STREAM_NAMES, ss.spawn(len(STREAM_NAMES)))}
