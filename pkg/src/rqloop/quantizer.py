"""
Recursive uniform quantiser.

The quantiser carries one number between steps, the squared step size
``delta_sq`` (per state dimension in the vector case). It is initialised
from the prior spread of ``x0`` and updated from the realised switch value
only, so encoder and decoder can run the same recursion without extra
signalling.

Bins are mid-rise (``codepoint = delta * (floor(x / delta) + 0.5)``) and
laid symmetrically over the typical set of half-width
``0.5 * sqrt(2 pi e) * sigma``, where ``sigma`` is the conditional
standard deviation implied by ``delta_sq = eta * sigma^2 + epsilon``. The
bin count is the ceiling of width / delta, rounded up to an even number.

Samples outside the typical set are counted as overflow. By default the
bin index is still sent (``overflow="extend"``). With ``overflow="clamp"``
the outermost bin centre is sent instead, which saturates the control
signal and can destabilise an otherwise L2-stable loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from . import matrixcore as mc
from .analysis import TWO_PI_E, ChannelModel
from .errors import IllPosedError

Overflow = Literal["extend", "clamp"]


@dataclass(frozen=True)
class QuantizerState:
    delta_sq: float
    k: int
    n: int
    eta: float
    epsilon: float
    capacity_bits: float = math.inf

    def __post_init__(self):
        if not self.delta_sq > 0:
            raise ValueError(f"delta_sq must stay positive, got {self.delta_sq}")

    @property
    def delta(self) -> float:
        return math.sqrt(self.delta_sq)

    @property
    def eta_per_dim(self) -> float:
        if math.isinf(self.capacity_bits):
            return 0.0
        return TWO_PI_E * 2.0 ** (-2.0 * self.capacity_bits / self.n)


@dataclass(frozen=True)
class QuantizedValue:
    codepoint: np.ndarray
    bin_index: np.ndarray
    overflowed: np.ndarray


def init_delta_scalar(sigma_0_2: float, ch: ChannelModel) -> QuantizerState:
    """``delta_0^2 = eta sigma_0^2 + epsilon``."""
    if sigma_0_2 < 0:
        raise ValueError("sigma_0_2 must be >= 0")
    return QuantizerState(ch.eta * sigma_0_2 + ch.epsilon, 0, 1, ch.eta, ch.epsilon, ch.capacity_bits)


def init_delta_vector(P0, ch: ChannelModel) -> QuantizerState:
    """``delta_0^2 = eta |P0|^(1/n) + epsilon`` with the full-rate ``eta = 2 pi e / 2^(2C)``.

    A singular ``P0`` contributes nothing, leaving ``delta_0^2 = epsilon``.
    """
    P0 = mc.as_matrix(P0, "P0")
    n = P0.shape[0]
    det = mc.determinant(P0)
    if det < -1e-12 * max(1.0, float(np.max(np.abs(P0)))) ** n:
        raise IllPosedError(f"P0 has a negative determinant ({det!r})")
    return QuantizerState(ch.eta * max(det, 0.0) ** (1.0 / n) + ch.epsilon, 0, n, ch.eta, ch.epsilon, ch.capacity_bits)


def next_delta_sq_scalar(delta_sq, gamma, alpha: float, closed_gain: float, G: float,
                         sigma_w2: float, eta: float, epsilon: float):
    """One scalar step-size update, vectorised over ``delta_sq`` and ``gamma``.

    Evaluated as ``eps + xi^2 (d - eps) + eta G (1 - gamma) d + eta sigma_w^2``,
    which equals the expanded form but cannot be pushed below ``eps`` by
    rounding (the expanded form amplifies such errors by ``alpha^2`` per
    open step).
    """
    d = np.asarray(delta_sq, dtype=float)
    g = np.asarray(gamma, dtype=float)
    xi2 = alpha * alpha * g + closed_gain * closed_gain * (1.0 - g)
    return epsilon + xi2 * (d - epsilon) + eta * G * (1.0 - g) * d + eta * sigma_w2


def update_delta_scalar(
    st: QuantizerState, gamma: int, alpha: float, closed_gain: float, G: float,
    sigma_w2: float, ch: ChannelModel,
) -> QuantizerState:
    """``d' = d (xi^2 + eta G (1 - gamma)) + eta sigma_w^2 + eps (1 - xi^2)``."""
    d = next_delta_sq_scalar(st.delta_sq, gamma, alpha, closed_gain, G, sigma_w2, ch.eta, ch.epsilon)
    return replace(st, delta_sq=float(d), k=st.k + 1)


@dataclass(frozen=True)
class VectorStepFactors:
    """Constants of the per-dimension step-size update, precomputed once per loop."""

    open_factor: float
    closed_factor: float
    noise_term: float

    @classmethod
    def from_system(cls, A, closed, W, ch: ChannelModel) -> "VectorStepFactors":
        A = mc.as_matrix(A, "A")
        n = A.shape[0]
        fa = abs(mc.determinant(A)) ** (2.0 / n)
        fc = abs(mc.determinant(closed)) ** (2.0 / n)
        detW = mc.determinant(W)
        noise = ch.eta_per_dim(n) * max(detW, 0.0) ** (1.0 / n)
        return cls(fa, fc, noise)


def update_delta_vector(st: QuantizerState, gamma: int, A, closed, W, ch: ChannelModel,
                        factors: VectorStepFactors | None = None) -> QuantizerState:
    """``d' = d (gamma |A|^(2/n) + (1-gamma) |A-BL|^(2/n)) + 2 pi e 2^(-2C/n) |W|^(1/n) + eps``."""
    f = factors or VectorStepFactors.from_system(A, closed, W, ch)
    mult = f.open_factor if gamma else f.closed_factor
    return replace(st, delta_sq=st.delta_sq * mult + f.noise_term + ch.epsilon, k=st.k + 1)


def support_halfwidth(delta_sq, eta_dim: float, epsilon: float):
    """Typical-set half-width per dimension, ``0.5 sqrt(2 pi e sigma^2)``.

    ``sigma^2 = (delta_sq - epsilon) / eta_dim`` is the spread implied by the
    step size; infinite when the channel is noiseless (``eta_dim = 0``).
    """
    d = np.asarray(delta_sq, dtype=float)
    if eta_dim == 0.0:
        return np.full_like(d, np.inf)
    sigma2 = np.maximum(d - epsilon, 0.0) / eta_dim
    return 0.5 * np.sqrt(TWO_PI_E * sigma2)


def bin_count(delta, halfwidth):
    """Even number of bins of width ``delta`` covering ``[-halfwidth, halfwidth]`` (at least 2)."""
    hw = np.asarray(halfwidth, dtype=float)
    nb = np.ceil(2.0 * hw / np.asarray(delta, dtype=float))
    finite = np.isfinite(nb)
    nb = np.maximum(np.where(finite, nb, 0.0), 2.0)
    return np.where(finite, nb + np.mod(nb, 2.0), np.inf)


def quantize_uniform(x, delta, support_halfwidth=np.inf, overflow: Overflow = "extend") -> QuantizedValue:
    """Mid-rise uniform quantisation of ``x`` with step ``delta``.

    ``x``, ``delta`` and ``support_halfwidth`` broadcast against each other.
    """
    x = np.asarray(x, dtype=float)
    delta = np.asarray(delta, dtype=float)
    idx = np.floor(x / delta)
    nb = bin_count(delta, support_halfwidth)
    half = nb / 2.0
    over = (idx < -half) | (idx > half - 1.0)
    if overflow == "clamp":
        idx = np.where(over, np.clip(idx, -half, half - 1.0), idx)
    elif overflow != "extend":
        raise ValueError(f"unknown overflow policy {overflow!r}")
    return QuantizedValue(delta * (idx + 0.5), idx, over)


def quantize_state(x, st: QuantizerState, overflow: Overflow = "extend") -> QuantizedValue:
    """Quantise a state (scalar or per-dimension vector) with the current step size."""
    eta_dim = st.eta if st.n == 1 else st.eta_per_dim
    hw = support_halfwidth(st.delta_sq, eta_dim, st.epsilon)
    return quantize_uniform(x, st.delta, hw, overflow)


def gaussian_entropy_bits(cov) -> float:
    """Differential entropy ``0.5 log2((2 pi e)^n |P|)`` of ``N(0, P)``."""
    P = mc.as_matrix(cov, "cov")
    n = P.shape[0]
    det = mc.determinant(P)
    if det <= 0:
        raise IllPosedError("covariance must be positive definite")
    return 0.5 * (n * math.log2(TWO_PI_E) + math.log2(det))


def rate_bits(delta_sq, variance: float | None = None, *, entropy: float | None = None) -> float:
    """Bits per sample ``h - log2(delta)`` for a scalar Gaussian state.

    Give either ``variance`` (entropy ``0.5 log2(2 pi e variance)``) or the
    differential ``entropy`` in bits directly.
    """
    d2 = delta_sq.delta_sq if isinstance(delta_sq, QuantizerState) else float(delta_sq)
    h = _entropy(variance, entropy)
    return h - 0.5 * math.log2(d2)


def vector_rate_bits(delta_sq, entropy: float, n: int) -> tuple[float, float]:
    """Two rate diagnostics for a per-dimension step size.

    Returns ``(h - n log2 delta, (2/n) h - n log2 delta)``. The first is the
    bits needed for ``n`` dimensions with joint entropy ``h``; the second is
    the alternative form with the ``2/n`` entropy scaling. Neither gates the
    simulation.
    """
    d2 = delta_sq.delta_sq if isinstance(delta_sq, QuantizerState) else float(delta_sq)
    log_d = 0.5 * math.log2(d2)
    return entropy - n * log_d, (2.0 / n) * entropy - n * log_d


def _entropy(variance, entropy):
    if (variance is None) == (entropy is None):
        raise ValueError("give exactly one of variance or entropy")
    if entropy is not None:
        return float(entropy)
    if not variance > 0:
        raise ValueError("variance must be > 0")
    return 0.5 * math.log2(TWO_PI_E * variance)
