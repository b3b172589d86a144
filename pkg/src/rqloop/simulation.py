"""
Closed-loop simulation with intermittent observation and recursive quantisation.

Per step ``k``: draw ``gamma_k``; when the switch is ON quantise ``x_k``
with the current step size and apply ``u_k = -L x_k^q``, otherwise apply
no input; advance the plant; then update the step size from ``gamma_k``.
The step size is updated on open-loop steps too, with the open-loop
multiplier, so the quantiser widens while the switch is OFF.

Every run draws from its own substreams (``switch``, ``noise``, ``init``)
derived from ``(seed, run_index)``. Runs are advanced in lock-step as a
batch, but the arithmetic is elementwise per run, so a run's trace does
not depend on which batch or thread it was computed in.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import matrixcore as mc
from .analysis import ChannelModel
from .errors import DimensionError
from .lqr import ScalarPlant, VectorPlant, lqr_gain
from .quantizer import (
    Overflow, VectorStepFactors, init_delta_scalar, init_delta_vector, quantize_uniform,
    next_delta_sq_scalar, support_halfwidth,
)
from .switching import SwitchModel, gammas_from_uniforms, run_streams

DEFAULT_DIVERGENCE_THRESHOLD = 1e9


@dataclass(frozen=True)
class LoopConfig:
    """Everything needed to reproduce one run (or an ensemble of runs).

    ``gain`` overrides the controller: the scalar ``l`` or the ``m x n``
    matrix ``L``. Without it the scalar plant's own gain is used, and
    vector plants get the LQR gain. ``x0`` fixes the initial state instead
    of drawing it; ``gamma_path`` replays a fixed switch sequence instead
    of drawing from ``switch``.
    """

    plant: ScalarPlant | VectorPlant
    switch: SwitchModel
    channel: ChannelModel = field(default_factory=ChannelModel)
    horizon: int = 100
    seed: int = 0
    gain: float | np.ndarray | None = None
    divergence_threshold: float = DEFAULT_DIVERGENCE_THRESHOLD
    x0: float | np.ndarray | None = None
    gamma_path: np.ndarray | None = None
    overflow: Overflow = "extend"
    run_index: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.divergence_threshold > 0:
            raise ValueError("divergence_threshold must be > 0")
        if self.gamma_path is not None and len(self.gamma_path) < self.horizon:
            raise ValueError("gamma_path is shorter than the horizon")

    @property
    def is_scalar(self) -> bool:
        return isinstance(self.plant, ScalarPlant)

    def feedback_matrix(self) -> np.ndarray:
        """The gain as an ``m x n`` matrix."""
        if self.gain is not None:
            L = mc.as_matrix(self.gain, "gain")
        elif self.is_scalar:
            L = np.array([[self.plant.feedback_gain()]])
        else:
            L = lqr_gain(self.plant).L
        n = 1 if self.is_scalar else self.plant.n
        m = 1 if self.is_scalar else self.plant.m
        if L.shape != (m, n):
            raise DimensionError(f"gain must be {m}x{n}, got {L.shape}")
        return L


@dataclass
class Trace:
    """One run. ``states`` has one more entry than the per-step arrays
    unless the run was truncated at divergence."""

    states: np.ndarray
    gammas: np.ndarray
    deltas_sq: np.ndarray
    inputs: np.ndarray
    overflow_count: int
    first_divergence: int | None = None


@dataclass
class EnsembleStats:
    """Per-time ensemble moments over runs that have not diverged yet."""

    k: np.ndarray
    second_moment: np.ndarray
    ci_halfwidth: np.ndarray
    alive: np.ndarray
    diverged_fraction: np.ndarray
    runs: int
    covariance: np.ndarray | None = None
    overflow_count: int = 0
    first_divergence: np.ndarray | None = None
    ci_z: float = 3.0


def detect_divergence(states, threshold: float = DEFAULT_DIVERGENCE_THRESHOLD) -> int | None:
    """First index whose state norm exceeds ``threshold`` (non-finite counts), else ``None``."""
    if not threshold > 0:
        raise ValueError("threshold must be > 0")
    if isinstance(states, Trace):
        states = states.states
    x = np.asarray(states, dtype=float)
    norms = np.abs(x) if x.ndim == 1 else np.sqrt(np.sum(x * x, axis=tuple(range(1, x.ndim))))
    bad = ~(norms <= threshold)
    hits = np.flatnonzero(bad)
    return int(hits[0]) if hits.size else None


# -- random inputs -----------------------------------------------------------


def _draw_inputs(cfg: LoopConfig, runs: range, n: int):
    """Initial states, switch paths and unit-variance noise for ``runs``."""
    N = cfg.horizon
    z0 = np.empty((len(runs), n))
    zw = np.empty((len(runs), N, n))
    g = np.empty((len(runs), N), dtype=np.int8)
    for i, r in enumerate(runs):
        st = run_streams(cfg.seed, r)
        z0[i] = st["init"].standard_normal(n)
        zw[i] = st["noise"].standard_normal((N, n))
        if cfg.gamma_path is None:
            g[i] = gammas_from_uniforms(cfg.switch, st["switch"].random(N))
    if cfg.gamma_path is not None:
        g[:] = np.asarray(cfg.gamma_path[:N], dtype=np.int8)
    return z0, zw, g


def _rowmul(X, M):
    """``X @ M.T`` for a batch of row vectors, as explicit per-column sums."""
    out = np.zeros((X.shape[0], M.shape[0]))
    for j in range(M.shape[1]):
        out += X[:, j:j + 1] * M[:, j]
    return out


@dataclass
class _System:
    A: np.ndarray
    B: np.ndarray
    L: np.ndarray
    noise_factor: np.ndarray
    init_factor: np.ndarray
    n: int
    scalar: bool
    alpha: float = 0.0
    closed_gain: float = 0.0
    G: float = 0.0
    sigma_w2: float = 0.0
    factors: VectorStepFactors | None = None
    delta0_sq: float = 0.0
    eta_dim: float = 0.0


def _system(cfg: LoopConfig) -> _System:
    L = cfg.feedback_matrix()
    ch = cfg.channel
    pl = cfg.plant
    if cfg.is_scalar:
        l = float(L[0, 0])
        c = pl.alpha - pl.b * l
        return _System(
            A=np.array([[pl.alpha]]), B=np.array([[pl.b]]), L=L,
            noise_factor=np.array([[math.sqrt(pl.sigma_w2)]]),
            init_factor=np.array([[math.sqrt(pl.sigma_0_2)]]),
            n=1, scalar=True, alpha=pl.alpha, closed_gain=c, G=(pl.b * l) ** 2 / 12.0,
            sigma_w2=pl.sigma_w2, delta0_sq=init_delta_scalar(pl.sigma_0_2, ch).delta_sq,
            eta_dim=ch.eta,
        )
    closed = pl.A - pl.B @ L
    return _System(
        A=pl.A, B=pl.B, L=L, noise_factor=mc.psd_factor(pl.W), init_factor=mc.psd_factor(pl.P0),
        n=pl.n, scalar=False, factors=VectorStepFactors.from_system(pl.A, closed, pl.W, ch),
        delta0_sq=init_delta_vector(pl.P0, ch).delta_sq, eta_dim=ch.eta_per_dim(pl.n),
    )


def _simulate_batch(cfg: LoopConfig, sysm: _System, runs: range):
    ch = cfg.channel
    N, n = cfg.horizon, sysm.n
    M = len(runs)
    z0, zw, g = _draw_inputs(cfg, runs, n)
    x = _rowmul(z0, sysm.init_factor) if cfg.x0 is None else np.tile(
        np.asarray(cfg.x0, dtype=float).reshape(1, n), (M, 1))

    states = np.full((M, N + 1, n), np.nan)
    deltas = np.full((M, N), np.nan)
    inputs = np.full((M, N, sysm.L.shape[0]), np.nan)
    overflow = np.zeros(M, dtype=np.int64)
    first_div = np.full(M, -1, dtype=np.int64)
    d2 = np.full(M, sysm.delta0_sq)
    thr = cfg.divergence_threshold

    def check(k, x):
        nrm = np.sqrt(np.sum(x * x, axis=1))
        new = (~(nrm <= thr)) & (first_div < 0)
        first_div[new] = k

    states[:, 0] = x
    check(0, x)
    for k in range(N):
        alive = first_div < 0
        if not alive.any():
            break
        gk = g[:, k]
        closed = gk == 0
        delta = np.sqrt(d2)
        hw = support_halfwidth(d2, sysm.eta_dim, ch.epsilon)
        qv = quantize_uniform(x, delta[:, None], hw[:, None], cfg.overflow)
        overflow += (np.any(qv.overflowed, axis=1) & closed & alive)
        u = -_rowmul(qv.codepoint, sysm.L)
        u[~closed] = 0.0
        w = _rowmul(zw[:, k], sysm.noise_factor)
        x_next = _rowmul(x, sysm.A) + _rowmul(u, sysm.B) + w

        if sysm.scalar:
            d2_next = next_delta_sq_scalar(d2, gk, sysm.alpha, sysm.closed_gain, sysm.G,
                                           sysm.sigma_w2, ch.eta, ch.epsilon)
        else:
            f = sysm.factors
            d2_next = d2 * np.where(gk == 1, f.open_factor, f.closed_factor) + f.noise_term + ch.epsilon

        deltas[alive, k] = d2[alive]
        inputs[alive, k] = u[alive]
        states[alive, k + 1] = x_next[alive]
        check(k + 1, np.where(alive[:, None], x_next, 0.0))
        # frozen runs carry zeros so the batch never overflows
        x = np.where((first_div < 0)[:, None], x_next, 0.0)
        d2 = np.where(first_div < 0, d2_next, sysm.delta0_sq)
    return states, deltas, inputs, g, overflow, first_div


def _to_trace(cfg, states, deltas, inputs, g, overflow, first_div, scalar):
    d = int(first_div)
    end = cfg.horizon if d < 0 else d
    st = states[: end + 1]
    if scalar:
        st = st[:, 0]
    return Trace(
        states=st, gammas=g[:end].astype(np.int8), deltas_sq=deltas[:end],
        inputs=inputs[:end, 0] if scalar else inputs[:end],
        overflow_count=int(overflow), first_divergence=None if d < 0 else d,
    )


def run_scalar(cfg: LoopConfig) -> Trace:
    """Simulate one scalar run; truncated at the first divergence."""
    if not cfg.is_scalar:
        raise TypeError("run_scalar needs a ScalarPlant config")
    out = _simulate_batch(cfg, _system(cfg), range(cfg.run_index, cfg.run_index + 1))
    return _to_trace(cfg, *(a[0] for a in out), scalar=True)


def run_vector(cfg: LoopConfig) -> Trace:
    """Simulate one vector run; truncated at the first divergence."""
    if cfg.is_scalar:
        raise TypeError("run_vector needs a VectorPlant config")
    out = _simulate_batch(cfg, _system(cfg), range(cfg.run_index, cfg.run_index + 1))
    return _to_trace(cfg, *(a[0] for a in out), scalar=False)


def run_batch(cfg: LoopConfig, runs: int, threads: int = 1, chunk: int = 2048):
    """Raw per-run arrays for runs ``0..runs-1``: states ``(M, N+1, n)``, first divergence ``(M,)``, ..."""
    sysm = _system(cfg)
    bounds = [(s, min(s + chunk, runs)) for s in range(0, runs, chunk)]

    def work(b):
        return _simulate_batch(cfg, sysm, range(*b))

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(6)), sysm


def run_ensemble(cfg: LoopConfig, runs: int, threads: int = 1, ci_z: float = 3.0) -> EnsembleStats:
    """Monte Carlo second moments over ``runs`` independent runs.

    At each ``k`` only runs that have not yet diverged contribute; the
    confidence half-width is ``ci_z`` standard errors of the mean of
    ``|x_k|^2``.
    """
    if runs < 2:
        raise ValueError("need at least 2 runs")
    (states, _, _, _, overflow, first_div), sysm = run_batch(cfg, runs, threads)
    N = cfg.horizon
    ks = np.arange(N + 1)
    alive_mask = (first_div[:, None] < 0) | (first_div[:, None] > ks[None, :])
    sq = np.sum(states * states, axis=2)
    sq = np.where(alive_mask, sq, 0.0)
    alive = alive_mask.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = sq.sum(axis=0) / alive
        var = np.where(alive_mask, (sq - mean) ** 2, 0.0).sum(axis=0) / np.maximum(alive - 1, 1)
        half = ci_z * np.sqrt(var / alive)
    cov = None
    if not sysm.scalar:
        xs = np.where(alive_mask[:, :, None], states, 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            cov = np.einsum("mki,mkj->kij", xs, xs) / alive[:, None, None]
    diverged = ((first_div[:, None] >= 0) & (first_div[:, None] <= ks[None, :])).mean(axis=0)
    return EnsembleStats(
        k=ks, second_moment=mean, ci_halfwidth=half, alive=alive, diverged_fraction=diverged,
        runs=runs, covariance=cov, overflow_count=int(overflow.sum()), first_divergence=first_div,
        ci_z=ci_z,
    )
