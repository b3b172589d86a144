"""
Closed-form stability conditions, asymptotic moments and moment recursions.

Conventions: logarithms are base 2; ``c`` denotes the closed-loop gain
``alpha - b l``; ``G = b^2 l^2 / 12``; ``eta = 2 pi e / 2^(2C)`` (zero for
infinite capacity).

Finite-capacity vector plants only get the infinite-capacity bound, which
is then a necessary condition and not a sufficient one.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np

from . import matrixcore as mc
from .errors import DivergenceError, IllPosedError
from .lqr import ScalarPlant
from .switching import SwitchModel, state_distribution_path

log = logging.getLogger(__name__)

TWO_PI_E = 2.0 * math.pi * math.e
DEFAULT_EPSILON = 1e-3


@dataclass(frozen=True)
class ChannelModel:
    """Channel of ``capacity_bits`` per use (``math.inf`` allowed) plus slack ``epsilon``."""

    capacity_bits: float = math.inf
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if not self.capacity_bits > 0:
            raise ValueError(f"capacity must be > 0, got {self.capacity_bits}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")

    @property
    def infinite(self) -> bool:
        return math.isinf(self.capacity_bits)

    @property
    def eta(self) -> float:
        if self.infinite:
            return 0.0
        return TWO_PI_E / 2.0 ** (2.0 * self.capacity_bits)

    def eta_per_dim(self, n: int) -> float:
        """``2 pi e 2^(-2C/n)``, the noise-injection factor of the vector step-size update."""
        if self.infinite:
            return 0.0
        return TWO_PI_E * 2.0 ** (-2.0 * self.capacity_bits / n)


Regime = Literal["infinite_capacity", "finite_capacity", "below_threshold"]


@dataclass
class StabilityReport:
    """Result of a bound evaluation.

    ``bound`` is clamped to [0, 1]; ``raw_bound`` keeps the formula value.
    When the intermittence parameter (``p`` or ``p/q``) is supplied,
    ``stable`` answers whether it is strictly below the bound and
    ``asymptotic_second_moment`` holds the limit (``inf`` if unstable);
    otherwise ``stable`` says whether any positive intermittence is
    tolerated at all.
    """

    regime: Regime
    bound: float
    raw_bound: float
    capacity_threshold_bits: float
    stable: bool
    bound_kind: Literal["p", "p_over_q"] = "p"
    parameter: float | None = None
    asymptotic_second_moment: float | list | None = None
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        m = d["asymptotic_second_moment"]
        if isinstance(m, float) and math.isinf(m):
            d["asymptotic_second_moment"] = "inf"
        return d


def capacity_threshold(alpha: float) -> float:
    """Minimum capacity ``0.5 log2(pi e alpha^2 / 6)`` for any L2 stabilisation."""
    return 0.5 * math.log2(math.pi * math.e * alpha * alpha / 6.0)


def capacity_threshold_printed_markov(alpha: float) -> float:
    """The alternative Markov threshold ``0.5 log2(alpha^2 / (6 pi e))``.

    Kept for reference only: it is negative for moderate ``alpha`` and
    does not follow from the ``eta G < 1`` condition that it is derived
    from, so :func:`markov_scalar_bound` uses :func:`capacity_threshold`.
    """
    return 0.5 * math.log2(alpha * alpha / (6.0 * math.pi * math.e))


def _clamp01(x):
    return min(1.0, max(0.0, x))


def _scalar_terms(plant: ScalarPlant, ch: ChannelModel):
    a2 = plant.alpha ** 2
    c = plant.closed_loop_gain()
    G = plant.quant_gain()
    return a2, c * c, ch.eta * G, G


def _regime(plant, ch) -> Regime:
    if ch.infinite:
        return "infinite_capacity"
    if ch.capacity_bits <= capacity_threshold(plant.alpha):
        return "below_threshold"
    return "finite_capacity"


def bernoulli_scalar_bound(plant: ScalarPlant, ch: ChannelModel, p: float | None = None) -> StabilityReport:
    """Largest Bernoulli outage probability keeping the scalar loop L2 stable."""
    a2, c2, etaG, _ = _scalar_terms(plant, ch)
    regime = _regime(plant, ch)
    thr = capacity_threshold(plant.alpha)
    warnings = []
    if regime == "below_threshold":
        raw = 0.0
        warnings.append("capacity at or below the stabilisation threshold: unstable for every p")
    elif c2 >= 1.0:
        raw = 0.0
        warnings.append("closed-loop gain has |c| >= 1: no stabilising loop")
    elif a2 - c2 - etaG <= 0.0:
        raw = 0.0
    else:
        raw = (1.0 - c2 - etaG) / (a2 - c2 - etaG)
    rep = StabilityReport(regime=regime, bound=_clamp01(raw), raw_bound=raw,
                          capacity_threshold_bits=thr, stable=False, warnings=warnings)
    if p is None:
        rep.stable = regime != "below_threshold" and rep.bound > 0.0
    else:
        rep.parameter = p
        rep.asymptotic_second_moment = bernoulli_scalar_asymptotic_var(plant, ch, p)
        rep.stable = math.isfinite(rep.asymptotic_second_moment)
    return rep


def bernoulli_scalar_asymptotic_var(plant: ScalarPlant, ch: ChannelModel, p: float) -> float:
    """Limit of the state variance under Bernoulli(p) outages, or ``inf``."""
    a2, c2, etaG, G = _scalar_terms(plant, ch)
    if _regime(plant, ch) == "below_threshold":
        return math.inf
    omega2 = a2 * p + c2 * (1.0 - p)
    den = 1.0 - omega2 - etaG * (1.0 - p)
    if not den > 0.0:
        return math.inf
    num = plant.sigma_w2 + (0.0 if ch.infinite else G * (1.0 - p) * ch.epsilon)
    return num / den


def markov_scalar_bound(plant: ScalarPlant, ch: ChannelModel, switch: SwitchModel | None = None) -> StabilityReport:
    """Largest ratio ``p/q`` of a Markov switch keeping the scalar loop L2 stable."""
    a2, c2, etaG, _ = _scalar_terms(plant, ch)
    regime = _regime(plant, ch)
    thr = capacity_threshold(plant.alpha)
    warnings = []
    if regime == "below_threshold":
        raw = 0.0
        warnings.append("capacity at or below the stabilisation threshold: unstable for every p, q")
    elif c2 >= 1.0:
        raw = 0.0
        warnings.append("closed-loop gain has |c| >= 1: no stabilising loop")
    else:
        raw = (1.0 - c2 - etaG) / (a2 - 1.0)
    rep = StabilityReport(regime=regime, bound=max(0.0, raw), raw_bound=raw,
                          capacity_threshold_bits=thr, stable=False, bound_kind="p_over_q",
                          warnings=warnings)
    if switch is None:
        rep.stable = regime != "below_threshold" and rep.bound > 0.0
    else:
        rep.parameter = _ratio(switch.p, switch.q)
        rep.asymptotic_second_moment = markov_scalar_asymptotic_var(plant, ch, switch.p, switch.q)
        rep.stable = math.isfinite(rep.asymptotic_second_moment)
    return rep


def _ratio(p, q):
    if q == 0.0:
        return math.inf if p > 0 else 0.0
    return p / q


def markov_scalar_asymptotic_var(plant: ScalarPlant, ch: ChannelModel, p: float, q: float) -> float:
    """Limit of the state variance under a Markov(p, q) switch, or ``inf``.

    Evaluated at the stationary outage probability; the boundary ratio
    itself is unstable (strict inequality).
    """
    if p + q == 0.0:
        raise IllPosedError("p = q = 0: the chain has no unique stationary law")
    if q == 0.0:
        return math.inf
    a2, c2, etaG, G = _scalar_terms(plant, ch)
    if _regime(plant, ch) == "below_threshold":
        return math.inf
    r = p / q
    den = (1.0 + r) - (a2 * r + c2 + etaG)
    if not den > 0.0:
        return math.inf
    num = (1.0 + r) * plant.sigma_w2 + (0.0 if ch.infinite else ch.epsilon * G)
    return num / den


def variance_sequence_scalar(
    plant: ScalarPlant, switch: SwitchModel, ch: ChannelModel, horizon: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Expected variance and squared step size, ``k = 0..horizon``.

    Iterates
        s[k+1] = w_k s[k] + b^2 l^2 (1 - pi_k) d[k] / 12 + sigma_w^2
        d[k+1] = d[k] (w_k + eta G (1 - pi_k)) + eta sigma_w^2 + eps (1 - w_k)
    with ``w_k = alpha^2 pi_k + c^2 (1 - pi_k)``. For infinite capacity the
    step-size terms are dropped. For a Markov switch ``pi_k`` follows the
    chain's marginal law and the recursion treats ``gamma_k`` as
    independent of the past, which is exact when ``p + q = 1``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    a2 = plant.alpha ** 2
    c2 = plant.closed_loop_gain() ** 2
    G = plant.quant_gain()
    eta = ch.eta
    pis = state_distribution_path(switch, horizon)
    s = np.empty(horizon + 1)
    d = np.zeros(horizon + 1)
    s[0] = plant.sigma_0_2
    if not ch.infinite:
        d[0] = eta * plant.sigma_0_2 + ch.epsilon
    for k in range(horizon):
        pi = pis[k]
        w2 = a2 * pi + c2 * (1.0 - pi)
        if ch.infinite:
            s[k + 1] = w2 * s[k] + plant.sigma_w2
        else:
            s[k + 1] = w2 * s[k] + G * (1.0 - pi) * d[k] + plant.sigma_w2
            d[k + 1] = ch.epsilon + w2 * (d[k] - ch.epsilon) + eta * G * (1.0 - pi) * d[k] + eta * plant.sigma_w2
    return s, d


def variance_closed_form_bernoulli(omega2: float, sigma_0_2: float, sigma_w2: float, k: int) -> float:
    """Unquantised Bernoulli variance at step ``k`` from the geometric sum."""
    if omega2 == 1.0:
        return sigma_0_2 + k * sigma_w2
    wk = omega2 ** k
    return wk * sigma_0_2 + (1.0 - wk) / (1.0 - omega2) * sigma_w2


def conditional_variance_path(
    plant: ScalarPlant, gammas, ch: ChannelModel,
) -> tuple[np.ndarray, np.ndarray]:
    """Variance and squared step size conditioned on a realised switch path.

    ``s[k+1] = xi_k^2 s[k] + b^2 l^2 (1 - gamma_k) d[k] / 12 + sigma_w^2``
    with ``xi_k^2 = alpha^2`` if ``gamma_k = 1`` else ``c^2``; ``d`` follows
    the conditional step-size recursion. Returned arrays have
    ``len(gammas) + 1`` entries.
    """
    g = np.asarray(gammas, dtype=float)
    a2 = plant.alpha ** 2
    c2 = plant.closed_loop_gain() ** 2
    G = plant.quant_gain()
    eta = ch.eta
    n = g.shape[0]
    s = np.empty(n + 1)
    d = np.empty(n + 1)
    s[0] = plant.sigma_0_2
    d[0] = eta * plant.sigma_0_2 + ch.epsilon
    for k in range(n):
        xi2 = a2 if g[k] else c2
        s[k + 1] = xi2 * s[k] + G * (1.0 - g[k]) * d[k] + plant.sigma_w2
        d[k + 1] = ch.epsilon + xi2 * (d[k] - ch.epsilon) + eta * G * (1.0 - g[k]) * d[k] + eta * plant.sigma_w2
    return s, d


# -- vector plants ---------------------------------------------------------


@dataclass
class NormBound:
    """Spectral-norm intermittence bound for a vector loop."""

    bound: float
    raw_bound: float
    open_norm: float
    closed_norm: float
    bound_kind: Literal["p", "p_over_q"]
    warning: str | None = None

    @property
    def stable(self) -> bool:
        return self.bound > 0.0


def vector_bernoulli_bound(A, closed) -> NormBound:
    """``p_max = (1 - ||A-BL||^2) / (||A||^2 - ||A-BL||^2)`` with spectral norms."""
    A = mc.as_matrix(A, "A")
    closed = mc.as_matrix(closed, "closed")
    if A.shape != closed.shape or A.shape[0] != A.shape[1]:
        raise IllPosedError(f"A {A.shape} and closed loop {closed.shape} must be square and equal")
    na, ng = mc.spectral_norm(A), mc.spectral_norm(closed)
    if na <= ng:
        raise IllPosedError(f"||A||_2 = {na:.6g} does not exceed ||A-BL||_2 = {ng:.6g}")
    raw = (1.0 - ng * ng) / (na * na - ng * ng)
    warning = None
    if ng >= 1.0:
        warning = f"||A-BL||_2 = {ng:.6g} >= 1: spectral-norm criterion cannot be met"
        log.warning(warning)
    return NormBound(_clamp01(raw), raw, na, ng, "p", warning)


def vector_markov_bound(A, closed) -> NormBound:
    """``(p/q)_max = (1 - ||A-BL||^2) / (||A||^2 - 1)`` with spectral norms."""
    A = mc.as_matrix(A, "A")
    closed = mc.as_matrix(closed, "closed")
    if A.shape != closed.shape or A.shape[0] != A.shape[1]:
        raise IllPosedError(f"A {A.shape} and closed loop {closed.shape} must be square and equal")
    na, ng = mc.spectral_norm(A), mc.spectral_norm(closed)
    if na <= 1.0:
        raise IllPosedError(f"||A||_2 = {na:.6g} <= 1: the bound needs an expanding open loop")
    raw = (1.0 - ng * ng) / (na * na - 1.0)
    warning = None
    if ng >= 1.0:
        warning = f"||A-BL||_2 = {ng:.6g} >= 1: spectral-norm criterion cannot be met"
        log.warning(warning)
    return NormBound(max(0.0, raw), raw, na, ng, "p_over_q", warning)


def covariance_recursion(A, closed, W, weight: float, P) -> np.ndarray:
    """``weight A P A' + (1 - weight) G P G' + W``, symmetrised."""
    A = np.asarray(A, dtype=float)
    Gm = np.asarray(closed, dtype=float)
    P = np.asarray(P, dtype=float)
    out = weight * (A @ P @ A.T) + (1.0 - weight) * (Gm @ P @ Gm.T) + np.asarray(W, dtype=float)
    return mc.symmetrize(out)


def contraction_factor(A, closed, weight: float) -> float:
    """``weight ||A||^2 + (1 - weight) ||A-BL||^2``; below 1 certifies a contraction."""
    return weight * mc.spectral_norm(A) ** 2 + (1.0 - weight) * mc.spectral_norm(closed) ** 2


def lyapunov_system(A, closed, weight: float):
    """Coefficient matrix of the ``n(n+1)/2`` unknowns ``s_ij`` (``i >= j``).

    Row ``(i, j)`` holds the coefficients of the expanded entry ``(i, j)``
    of ``weight A S A' + (1-weight) G S G'`` in terms of the lower
    triangle of the symmetric ``S``. Returns ``(M, index)`` where
    ``index`` lists the ``(i, j)`` pairs in row/column order.
    """
    A = mc.as_matrix(A, "A")
    Gm = mc.as_matrix(closed, "closed")
    n = A.shape[0]
    index = [(i, j) for i in range(n) for j in range(i + 1)]
    pos = {ij: r for r, ij in enumerate(index)}
    w1, w0 = weight, 1.0 - weight
    M = np.zeros((len(index), len(index)))
    for r, (i, j) in enumerate(index):
        for l in range(n):
            M[r, pos[(l, l)]] += w1 * A[i, l] * A[j, l] + w0 * Gm[i, l] * Gm[j, l]
            for k in range(l):
                M[r, pos[(l, k)]] += (w1 * (A[i, l] * A[j, k] + A[i, k] * A[j, l])
                                      + w0 * (Gm[i, l] * Gm[j, k] + Gm[i, k] * Gm[j, l]))
    return M, index


def solve_stationary_covariance(
    A, closed, W, weight: float,
    method: Literal["linear_system", "fixed_point"] = "linear_system",
    tol: float = 1e-13, max_iter: int = 1_000_000,
) -> np.ndarray:
    """Stationary ``P`` of ``P = weight A P A' + (1 - weight) G P G' + W``.

    Raises ``DivergenceError`` unless the spectral-norm contraction
    condition holds for ``weight``.
    """
    A = mc.as_matrix(A, "A")
    Gm = mc.as_matrix(closed, "closed")
    W = mc.as_matrix(W, "W")
    n = A.shape[0]
    if A.shape != (n, n) or Gm.shape != (n, n) or W.shape != (n, n):
        raise IllPosedError("A, closed loop and W must all be n x n")
    rho = contraction_factor(A, Gm, weight)
    if not rho < 1.0:
        raise DivergenceError(f"covariance map is not a contraction (factor {rho:.6g} >= 1)")
    if method == "linear_system":
        M, index = lyapunov_system(A, Gm, weight)
        rhs = np.array([W[i, j] for i, j in index])
        s = mc.solve_linear(np.eye(len(index)) - M, rhs)
        P = np.zeros((n, n))
        for val, (i, j) in zip(s, index):
            P[i, j] = P[j, i] = val
        return P
    if method == "fixed_point":
        P = W.copy()
        for _ in range(max_iter):
            P_next = covariance_recursion(A, Gm, W, weight, P)
            if np.max(np.abs(P_next - P)) <= tol * max(1.0, float(np.max(np.abs(P_next)))):
                return P_next
            P = P_next
        raise DivergenceError(f"fixed-point iteration did not settle in {max_iter} steps")
    raise ValueError(f"unknown method {method!r}")


def lyapunov_residual(A, closed, W, weight, P) -> float:
    return float(np.max(np.abs(covariance_recursion(A, closed, W, weight, P) - np.asarray(P))))


def markov_lyapunov_system(A, closed, p: float, q: float):
    """Integer-weight form with ``p`` and ``q`` in place of the stationary weights.

    Solving ``(p+q) I - M_pq`` against ``(p+q) W`` gives the same ``P`` as
    :func:`lyapunov_system` with ``weight = p / (p + q)``.
    """
    M, index = lyapunov_system(A, closed, p / (p + q))
    return (p + q) * M, index
