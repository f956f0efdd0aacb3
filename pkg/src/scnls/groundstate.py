"""Coupled elliptic ground states and the sharp interpolation constant.

Solves the real elliptic system

    -Lap P + P = (|P|^(2s) + beta |P|^(s-1) |Q|^(s+1)) P
    -Lap Q + Q = (|Q|^(2s) + beta |Q|^(s-1) |P|^(s+1)) Q

on the periodic grid and derives from the solution pair the best constant of

    ||u||_{2s+2}^{2s+2} + 2 beta ||uv||_{s+1}^{s+1} + ||v||_{2s+2}^{2s+2}
        <= K (||u||^2 + ||v||^2)^(s+1-sN/2) (||grad u||^2 + ||grad v||^2)^(sN/2)

via  K = 2(s+1) / ((N s)^(Ns/2) (2s+2-Ns)^(1-Ns/2) (||P||^2 + ||Q||^2)^s).

Solver: a stabilized spectral fixed-point iteration.  Each sweep applies the
exact inverse of (1 - Lap) in Fourier space to the nonlinear right-hand side
and renormalizes both components jointly by the factor

    S = (<P,(1-Lap)P> + <Q,(1-Lap)Q>) / (<N_P,P> + <N_Q,Q>),   gain S^gamma,

gamma = (2s+1)/(2s), which is the standard convergent normalization for a
nonlinearity of homogeneity 2s+1.  (A plain imaginary-time flow normalized to
prescribed masses cannot pin the zeroth-order coefficient to 1 at the
mass-critical exponent, where the mass of the solution family is
scale-invariant; the stabilized iteration has no such degeneracy and
converges from a symmetric Gaussian seed for every admissible s.)

At beta = 0 the system decouples and the solution pair found from a symmetric
seed consists of two copies of the scalar ground state, so the constant is
reported under both readings of the norm in the formula: the pair reading
``||P||^2 + ||Q||^2`` and the single-component reading ``||P||^2`` (Q = 0).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .grid import Grid

__all__ = [
    "GroundStatePair",
    "GroundStateError",
    "solve_ground_state",
    "k_opt",
    "gn_ratio",
    "critical_threshold",
]

_TINY = 1e-300


class GroundStateError(RuntimeError):
    """Raised when the elliptic iteration fails to converge."""

    def __init__(self, message: str, residual_trace: list[float] | None = None):
        super().__init__(message)
        self.residual_trace = residual_trace or []


@dataclass
class GroundStatePair:
    """Converged pair with residual and derived constants.

    ``k_opt_pair`` uses ||P||^2 + ||Q||^2 in the constant's formula,
    ``k_opt_single`` uses ||P||^2 alone (the Q = 0 reading, meaningful at
    beta = 0 where the system decouples).
    """

    P: np.ndarray
    Q: np.ndarray
    sigma: float
    beta: float
    grid: Grid
    residual_inf: float
    iterations: int
    norm_sq_P: float
    norm_sq_Q: float
    k_opt_pair: float
    k_opt_single: float


def _nonlinear_terms(P: np.ndarray, Q: np.ndarray, sigma: float, beta: float):
    """Right-hand sides N_P = (...)P and N_Q for nonnegative fields."""
    aP = np.abs(P)
    aQ = np.abs(Q)
    NP = aP ** (2.0 * sigma) * P
    NQ = aQ ** (2.0 * sigma) * Q
    if beta != 0.0:
        mixed_P = np.zeros_like(aP)
        mask = aP > _TINY
        mixed_P[mask] = aP[mask] ** (sigma - 1.0) * aQ[mask] ** (sigma + 1.0)
        mixed_Q = np.zeros_like(aQ)
        mask = aQ > _TINY
        mixed_Q[mask] = aQ[mask] ** (sigma - 1.0) * aP[mask] ** (sigma + 1.0)
        NP = NP + beta * mixed_P * P
        NQ = NQ + beta * mixed_Q * Q
    return NP, NQ


def _k_opt_value(sigma: float, dim: int, norm_sq_sum: float) -> float:
    ns = dim * sigma
    return (
        2.0 * (sigma + 1.0)
        / (ns ** (ns / 2.0) * (2.0 * sigma + 2.0 - ns) ** (1.0 - ns / 2.0))
        / norm_sq_sum**sigma
    )


def solve_ground_state(
    sigma: float,
    beta: float,
    grid: Grid,
    tol: float = 1e-10,
    max_iter: int = 5000,
    seed_width: float = 1.0,
) -> GroundStatePair:
    """Solve the coupled elliptic system from a symmetric Gaussian seed.

    Returns a :class:`GroundStatePair` whose elliptic residual max-norm is
    below ``tol``.  Raises :class:`GroundStateError` on non-convergence
    (with the residual trace attached) or on collapse to the zero solution.
    """
    dim = grid.dim
    upper = np.inf if dim <= 2 else 4.0 / (dim - 2)
    if not (0 < sigma < upper):
        raise ValueError(f"sigma must lie in (0, {upper}) for dim={dim}, got {sigma}")
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if 2.0 * sigma + 2.0 - dim * sigma <= 0:
        warnings.warn(
            "sigma at or beyond the energy-critical exponent; the constant's "
            "formula degenerates",
            stacklevel=2,
        )

    inv_symbol = 1.0 / (1.0 + grid.k_sq)
    gamma = (2.0 * sigma + 1.0) / (2.0 * sigma)

    P = np.exp(-grid.r_sq / (2.0 * seed_width**2))
    Q = P.copy()
    h = grid.spacing**dim

    def _apply_inv(f):
        return np.fft.ifftn(np.fft.fftn(f) * inv_symbol).real

    def _apply_op(f):
        # (1 - Lap) f via the spectral symbol 1 + |k|^2
        return np.fft.ifftn(np.fft.fftn(f) * (1.0 + grid.k_sq)).real

    trace: list[float] = []
    residual = np.inf
    for iteration in range(1, max_iter + 1):
        NP, NQ = _nonlinear_terms(P, Q, sigma, beta)
        lhs = float(((P * _apply_op(P)).sum() + (Q * _apply_op(Q)).sum()) * h)
        rhs = float(((P * NP).sum() + (Q * NQ).sum()) * h)
        if rhs <= 0 or lhs <= 0:
            raise GroundStateError(
                "iteration collapsed to the zero solution", trace
            )
        s_factor = (lhs / rhs) ** gamma
        P = s_factor * _apply_inv(NP)
        Q = s_factor * _apply_inv(NQ)

        NP, NQ = _nonlinear_terms(P, Q, sigma, beta)
        res_P = _apply_op(P) - NP
        res_Q = _apply_op(Q) - NQ
        residual = float(max(np.abs(res_P).max(), np.abs(res_Q).max()))
        trace.append(residual)
        if residual < tol:
            break
    else:
        raise GroundStateError(
            f"no convergence after {max_iter} iterations "
            f"(last residual {residual:.3e})",
            trace,
        )

    norm_sq_P = grid.norm_sq(P)
    norm_sq_Q = grid.norm_sq(Q)
    if norm_sq_P + norm_sq_Q < 1e-8:
        raise GroundStateError("converged to the zero solution (mass floor)", trace)

    return GroundStatePair(
        P=P,
        Q=Q,
        sigma=sigma,
        beta=beta,
        grid=grid,
        residual_inf=residual,
        iterations=iteration,
        norm_sq_P=norm_sq_P,
        norm_sq_Q=norm_sq_Q,
        k_opt_pair=_k_opt_value(sigma, dim, norm_sq_P + norm_sq_Q),
        k_opt_single=_k_opt_value(sigma, dim, norm_sq_P),
    )


def k_opt(gs: GroundStatePair, convention: str = "pair") -> float:
    """Best constant from the converged pair's discrete L2 norms.

    ``convention="pair"`` evaluates the formula with ||P||^2 + ||Q||^2;
    ``convention="single"`` with ||P||^2 alone (Q = 0 reading).
    """
    if convention == "pair":
        return gs.k_opt_pair
    if convention == "single":
        return gs.k_opt_single
    raise ValueError(f"convention must be 'pair' or 'single', got {convention!r}")


def gn_ratio(u: np.ndarray, v: np.ndarray, beta: float, sigma: float, grid: Grid) -> float:
    """Ratio of the inequality's left side to the right-side product.

    ratio = (||u||_{2s+2}^{2s+2} + 2 beta ||uv||_{s+1}^{s+1} + ||v||_{2s+2}^{2s+2})
            / ((M)^(s+1-sN/2) (Grad)^(sN/2))

    with M = ||u||^2 + ||v||^2 and Grad = ||grad u||^2 + ||grad v||^2.  By the
    sharp inequality the ratio never exceeds the best constant.
    """
    au = np.abs(u)
    av = np.abs(v)
    m = grid.norm_sq(u) + grid.norm_sq(v)
    if m <= 0:
        raise ValueError("gn_ratio requires a nonzero field pair")
    g = sum(grid.norm_sq(d) for d in grid.gradient(u))
    g += sum(grid.norm_sq(d) for d in grid.gradient(v))
    if g <= 0:
        raise ValueError("gn_ratio requires a field pair with nonzero gradient")
    lhs = grid.quadrature(
        au ** (2.0 * sigma + 2.0)
        + av ** (2.0 * sigma + 2.0)
        + 2.0 * beta * (au * av) ** (sigma + 1.0)
    )
    ns = grid.dim * sigma
    return float(lhs / (m ** (sigma + 1.0 - ns / 2.0) * g ** (ns / 2.0)))


def critical_threshold(lambda11: float, lambda22: float, k: float) -> float:
    """Mass-critical smallness bound 2 / (max(l11, l22) * K).

    Global existence holds at the critical exponent when
    sqrt(l11) ||u0||^2 + sqrt(l22) ||v0||^2 stays below this value.
    """
    if lambda11 <= 0 or lambda22 <= 0:
        raise ValueError("critical_threshold requires positive diagonal coefficients")
    if k <= 0:
        raise ValueError(f"best constant must be positive, got {k}")
    return 2.0 / (max(lambda11, lambda22) * k)
