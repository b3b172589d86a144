"""Plant definitions and infinite-horizon discrete LQR synthesis."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import matrixcore as mc
from .errors import ConvergenceError, DimensionError, IllPosedError

log = logging.getLogger(__name__)

DARE_TOL = 1e-12
DARE_MAX_ITER = 1_000_000
STALL_STEPS = 20


@dataclass(frozen=True)
class ScalarPlant:
    """``x[k+1] = alpha x[k] + b u[k] + w[k]`` with ``w ~ N(0, sigma_w2)``.

    The controller is either synthesised from ``(q_cost, r_cost)`` or the
    closed-loop gain ``alpha - b l`` is given directly through
    ``closed_gain``; exactly one of the two must be supplied.
    """

    alpha: float
    b: float = 1.0
    sigma_w2: float = 1.0
    sigma_0_2: float = 1.0
    q_cost: float | None = None
    r_cost: float | None = None
    closed_gain: float | None = None

    def __post_init__(self):
        if not abs(self.alpha) > 1.0:
            raise ValueError(f"open loop must be unstable (|alpha| > 1), got alpha={self.alpha}")
        if self.b == 0.0:
            raise ValueError("input gain b must be non-zero")
        if self.sigma_w2 < 0.0:
            raise ValueError("sigma_w2 must be >= 0")
        if self.sigma_0_2 < 0.0:
            raise ValueError("sigma_0_2 must be >= 0")
        has_costs = self.q_cost is not None or self.r_cost is not None
        if has_costs == (self.closed_gain is not None):
            raise ValueError("give either (q_cost, r_cost) or closed_gain, not both/neither")
        if has_costs and not (self.q_cost and self.q_cost > 0 and self.r_cost and self.r_cost > 0):
            raise ValueError("q_cost and r_cost must both be > 0")

    def closed_loop_gain(self) -> float:
        """``alpha - b l``, from LQR synthesis or as given."""
        if self.closed_gain is not None:
            return float(self.closed_gain)
        return float(self.alpha - self.b * self.feedback_gain())

    def feedback_gain(self) -> float:
        """The state feedback gain ``l``."""
        if self.closed_gain is not None:
            return float((self.alpha - self.closed_gain) / self.b)
        l, _ = scalar_lqr(self.alpha, self.b, self.q_cost, self.r_cost)
        return l

    def quant_gain(self) -> float:
        """``G = b^2 l^2 / 12``, the weight of the quantisation error variance."""
        bl = self.alpha - self.closed_loop_gain()
        return bl * bl / 12.0

    def as_vector(self) -> "VectorPlant":
        q = self.q_cost if self.q_cost is not None else 1.0
        r = self.r_cost if self.r_cost is not None else 1.0
        return VectorPlant(
            A=[[self.alpha]], B=[[self.b]], W=[[self.sigma_w2]], P0=[[self.sigma_0_2]],
            Q=[[q]], R=[[r]],
        )


@dataclass(frozen=True)
class VectorPlant:
    """``x[k+1] = A x[k] + B u[k] + w[k]`` with ``w ~ N(0, W)`` and ``x0 ~ N(0, P0)``.

    ``Q`` and ``R`` must be positive definite; ``W`` and ``P0`` only
    symmetric with a non-negative diagonal, so noiseless plants and a
    known initial state are allowed. Pass
    ``check_controllable=False`` to skip the controllability rank test
    (useful for degenerate test systems).
    """

    A: np.ndarray
    B: np.ndarray
    W: np.ndarray
    P0: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    check_controllable: bool = field(default=True, compare=False)

    def __post_init__(self):
        conv = {k: mc.as_matrix(getattr(self, k), k) for k in ("A", "B", "W", "P0", "Q", "R")}
        for k, v in conv.items():
            v.setflags(write=False)
            object.__setattr__(self, k, v)
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise DimensionError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n:
            raise DimensionError(f"B must have {n} rows, got {self.B.shape}")
        m = self.B.shape[1]
        for name, shape in (("W", (n, n)), ("P0", (n, n)), ("Q", (n, n)), ("R", (m, m))):
            if getattr(self, name).shape != shape:
                raise DimensionError(f"{name} must be {shape}, got {getattr(self, name).shape}")
        for name in ("Q", "R"):
            if not mc.is_positive_definite(getattr(self, name)):
                raise ValueError(f"{name} must be symmetric positive definite")
        for name in ("W", "P0"):
            M = getattr(self, name)
            if not (mc.is_symmetric(M) and np.all(np.diag(M) >= 0)):
                raise ValueError(f"{name} must be symmetric positive semi-definite")
        if self.check_controllable and mc.controllability_rank(self.A, self.B) < n:
            raise ValueError("(A, B) is not controllable")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


def _riccati_step(A, B, Q, R, P):
    BtP = B.T @ P
    S = R + BtP @ B
    K = np.column_stack([mc.solve_linear(S, col) for col in (BtP @ A).T])
    return mc.symmetrize(Q + A.T @ P @ A - A.T @ P @ B @ K)


def riccati_residual(plant: VectorPlant, P) -> float:
    """``||P - Ric(P)||_inf`` for the discrete algebraic Riccati map."""
    P = np.asarray(P, dtype=float)
    R_P = _riccati_step(plant.A, plant.B, plant.Q, plant.R, P)
    return float(np.max(np.abs(P - R_P)))


def solve_dare(plant: VectorPlant, tol: float = DARE_TOL, max_iter: int = DARE_MAX_ITER) -> np.ndarray:
    """Stabilising DARE solution by value iteration from ``P = Q``.

    Iterates until one more Riccati step moves ``P`` by at most ``tol``
    (max-abs). When ``P`` is large that can sit below the rounding floor,
    so once the step is within ``tol * ||P||_inf`` the iteration also stops
    as soon as the step stops shrinking for ``STALL_STEPS`` iterations.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    A, B, Q, R = plant.A, plant.B, plant.Q, plant.R
    P = Q.copy()
    best, stall = math.inf, 0
    for it in range(max_iter):
        P_next = _riccati_step(A, B, Q, R, P)
        delta = float(np.max(np.abs(P_next - P)))
        P = P_next
        if not np.all(np.isfinite(P)):
            break
        if delta <= tol:
            log.debug("DARE converged in %d iterations", it + 1)
            return P
        if delta <= tol * max(1.0, float(np.max(np.abs(P)))):
            stall = stall + 1 if delta >= best else 0
            if stall >= STALL_STEPS:
                log.debug("DARE reached rounding floor %.3e in %d iterations", delta, it + 1)
                return P
        best = min(best, delta)
    raise ConvergenceError(f"Riccati iteration did not converge within {max_iter} iterations")


@dataclass(frozen=True)
class LQRResult:
    P: np.ndarray
    L: np.ndarray
    closed_loop: np.ndarray
    closed_loop_norm: float
    spectral_radius: float

    @property
    def norm_contracting(self) -> bool:
        """Whether ``||A - BL||_2 < 1``; Schur stability alone does not imply this."""
        return self.closed_loop_norm < 1.0


def lqr_gain(plant: VectorPlant, tol: float = DARE_TOL, max_iter: int = DARE_MAX_ITER) -> LQRResult:
    """Infinite-horizon gain ``L = (R + B'PB)^{-1} B'PA`` and the closed loop ``A - BL``."""
    P = solve_dare(plant, tol=tol, max_iter=max_iter)
    A, B, R = plant.A, plant.B, plant.R
    S = R + B.T @ P @ B
    L = np.column_stack([mc.solve_linear(S, col) for col in (B.T @ P @ A).T])
    closed = A - B @ L
    res = LQRResult(
        P=P, L=L, closed_loop=closed,
        closed_loop_norm=mc.spectral_norm(closed),
        spectral_radius=mc.spectral_radius_estimate(closed),
    )
    if not res.norm_contracting:
        log.warning(
            "closed loop is not a spectral-norm contraction (||A-BL||_2 = %.6g); "
            "the intermittence bounds will be zero", res.closed_loop_norm,
        )
    return res


def scalar_lqr(alpha: float, b: float, q: float, r: float) -> tuple[float, float]:
    """Closed-form scalar DARE: returns ``(l, p)``.

    ``p`` is the positive root of ``b^2 p^2 + (r - alpha^2 r - q b^2) p - q r = 0``.
    """
    a2 = alpha * alpha
    bb = b * b
    lin = r * (1.0 - a2) - q * bb
    p = (-lin + math.sqrt(lin * lin + 4.0 * bb * q * r)) / (2.0 * bb)
    l = b * p * alpha / (r + bb * p)
    return l, p


def scalar_weights_for_closed_gain(
    alpha: float, b: float, target: float, r: float = 1.0, tol: float = 1e-12,
) -> float:
    """State weight ``q`` (with ``r`` fixed) whose LQR closed loop equals ``target``.

    For a scalar unstable plant the LQR closed-loop gain ``alpha - b l``
    has the sign of ``alpha`` and magnitude strictly inside ``(0, 1/|alpha|)``;
    it decreases monotonically in ``q``, so bisection on ``log q`` finds the
    weight. Targets outside that interval raise ``IllPosedError``.
    """
    c = abs(target)
    if not (0.0 < c < 1.0 / abs(alpha)) or math.copysign(1.0, target) != math.copysign(1.0, alpha):
        raise IllPosedError(
            f"closed-loop gain {target} is not reachable by LQR for alpha={alpha}: "
            f"need same sign and magnitude in (0, {1.0 / abs(alpha):.6g})"
        )

    def gain(logq):
        l, _ = scalar_lqr(alpha, b, math.exp(logq), r)
        return abs(alpha - b * l)

    lo, hi = -60.0, 60.0
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if gain(mid) > c:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return math.exp(0.5 * (lo + hi))
