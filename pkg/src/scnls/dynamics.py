"""Time integration of the coupled system by operator splitting.

The system integrated pathwise is

    i du + (Lap u + (l11 |u|^(2s) + l12 |v|^(s+1) |u|^(s-1)) u) dt = u o phi_1 dW
    i dv + (Lap v + (l22 |v|^(2s) + l21 |u|^(s+1) |v|^(s-1)) v) dt = v o phi_2 dW

with s = sigma and a real 2x2 coefficient matrix.  One step of size dt is the
composition

    N(dt/2) . L(dt) . W(dB) . N(dt/2)

where N is the exact nonlinear phase rotation (the bracketed multipliers are
real, so |u| and |v| are pointwise invariant), L is the exact unitary free
flow on the grid, and W is the exact pathwise noise phase.  Every sub-step
preserves the discrete mass of each component to round-off, and the
deterministic part is Strang splitting (second order).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .grid import Grid
from .noise import NoiseModel, sample_increments, stratonovich_phase

__all__ = [
    "Coupling",
    "SystemState",
    "TrajectoryResult",
    "nonlinear_phase",
    "strang_step",
    "evolve",
]

# below this modulus the singular mixed-term factor |.|^(sigma-1) is set to 0;
# it only ever multiplies the same near-zero value inside a unimodular phase
_TINY_MODULUS = 1e-300


@dataclass(frozen=True)
class Coupling:
    """Nonlinearity exponent sigma and interaction matrix.

    ``lam`` is the 2x2 real matrix ((l11, l12), (l21, l22)); positive entries
    are focusing, negative defocusing.  Off-diagonal symmetry l12 == l21 is
    required unless ``allow_asymmetric`` is set, in which case a warning is
    emitted and no energy identity is claimed.
    """

    sigma: float
    lam: np.ndarray
    allow_asymmetric: bool = False

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        if lam.shape != (2, 2):
            raise ValueError(f"lam must be 2x2, got shape {lam.shape}")
        object.__setattr__(self, "lam", lam)
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if lam[0, 1] != lam[1, 0]:
            if not self.allow_asymmetric:
                raise ValueError(
                    "asymmetric interaction matrix (l12 != l21); "
                    "set allow_asymmetric=True to override"
                )
            warnings.warn(
                "asymmetric interaction matrix: the energy functional is not "
                "a Hamiltonian of this flow and no energy identity holds",
                stacklevel=2,
            )

    @property
    def l11(self) -> float:
        return float(self.lam[0, 0])

    @property
    def l12(self) -> float:
        return float(self.lam[0, 1])

    @property
    def l21(self) -> float:
        return float(self.lam[1, 0])

    @property
    def l22(self) -> float:
        return float(self.lam[1, 1])

    def check_dimension(self, dim: int) -> None:
        """Warn when sigma falls outside the local-theory range for this dim.

        The admissible set is [0, 2/dim) union (1/2, 2/(dim-2)^+); for
        dim <= 2 the upper limit is infinite.
        """
        upper = np.inf if dim <= 2 else 2.0 / (dim - 2)
        if self.sigma >= upper:
            warnings.warn(
                f"sigma={self.sigma} is not subcritical for dim={dim}", stacklevel=2
            )
        if not (self.sigma < 2.0 / dim or self.sigma > 0.5):
            warnings.warn(
                f"sigma={self.sigma} lies outside the well-posedness range "
                f"[0, {2.0 / dim}) u (0.5, {upper}) for dim={dim}",
                stacklevel=2,
            )

    def is_mass_critical(self, dim: int) -> bool:
        return abs(self.sigma - 2.0 / dim) < 1e-12


@dataclass
class SystemState:
    """The complex field pair and current time."""

    u: np.ndarray
    v: np.ndarray
    t: float
    grid: Grid
    blown_up: bool = False

    def __post_init__(self):
        if self.u.shape != self.grid.shape or self.v.shape != self.grid.shape:
            raise ValueError("field shapes do not match the grid")

    def copy(self) -> "SystemState":
        return SystemState(self.u.copy(), self.v.copy(), self.t, self.grid, self.blown_up)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v)))


def _phase_multiplier(a_self: np.ndarray, a_other: np.ndarray, l_self: float,
                      l_mixed: float, sigma: float) -> np.ndarray:
    """Real multiplier l_self*|f|^(2s) + l_mixed*|g|^(s+1)*|f|^(s-1)."""
    mult = l_self * a_self ** (2.0 * sigma)
    if l_mixed != 0.0:
        mixed = np.zeros_like(a_self)
        mask = a_self > _TINY_MODULUS
        mixed[mask] = a_other[mask] ** (sigma + 1.0) * a_self[mask] ** (sigma - 1.0)
        mult = mult + l_mixed * mixed
    return mult


def nonlinear_phase(state: SystemState, dt: float, coupling: Coupling) -> SystemState:
    """Exact flow of the nonlinear sub-equation: pointwise phase rotation.

    u <- u * exp(i*dt*(l11|u|^(2s) + l12|v|^(s+1)|u|^(s-1))) and the symmetric
    update for v with (l22, l21).  Moduli are pointwise invariant; t is left
    to the step driver.
    """
    s = coupling.sigma
    au = np.abs(state.u)
    av = np.abs(state.v)
    mult_u = _phase_multiplier(au, av, coupling.l11, coupling.l12, s)
    mult_v = _phase_multiplier(av, au, coupling.l22, coupling.l21, s)
    u = state.u * np.exp(1j * dt * mult_u)
    v = state.v * np.exp(1j * dt * mult_v)
    return SystemState(u, v, state.t, state.grid, state.blown_up)


def strang_step(
    state: SystemState,
    dt: float,
    model: NoiseModel,
    increments: np.ndarray,
    coupling: Coupling,
    linear_multiplier: np.ndarray | None = None,
    dealias: bool = False,
) -> SystemState:
    """One full step N(dt/2) . L(dt) . W(dB) . N(dt/2); advances t by dt.

    ``linear_multiplier`` may carry a precomputed exp(-1j*k_sq*dt) to avoid
    re-evaluating it every step.  Non-finite output is flagged on the returned
    state instead of being raised.
    """
    grid = state.grid
    if linear_multiplier is None:
        linear_multiplier = np.exp(-1j * grid.k_sq * dt)
    half = nonlinear_phase(state, 0.5 * dt, coupling)

    u_hat = np.fft.fftn(half.u) * linear_multiplier
    v_hat = np.fft.fftn(half.v) * linear_multiplier
    if dealias:
        keep = grid.dealias_mask()
        u_hat *= keep
        v_hat *= keep
    u = np.fft.ifftn(u_hat)
    v = np.fft.ifftn(v_hat)

    if model.K > 0:
        u = stratonovich_phase(u, 1, model, increments)
        v = stratonovich_phase(v, 2, model, increments)

    out = nonlinear_phase(
        SystemState(u, v, state.t, grid, state.blown_up), 0.5 * dt, coupling
    )
    out.t = state.t + dt
    if not out.is_finite():
        out.blown_up = True
    return out


@dataclass
class TrajectoryResult:
    """Outcome of one integrated path.

    ``outcome`` is "completed", "blowup" (detector fired at ``t_star``) or
    "invalid" (non-finite state without a detector trigger).
    """

    outcome: str
    state: SystemState
    record: object
    t_star: float | None = None
    effective_T: float = 0.0
    dropped_remainder: float = 0.0
    steps: int = 0


def _spectral_diagnostics(state: SystemState) -> tuple[float, float]:
    """(grad_norm_sq, spectral_tail_fraction) from one FFT per component.

    grad_norm_sq is ||grad u||^2 + ||grad v||^2 by Parseval; the tail fraction
    is the share of |u_hat|^2 + |v_hat|^2 carried by modes in the top third of
    the resolvable frequency range (resolution-loss gauge, in [0, 1]).
    """
    grid = state.grid
    power = np.abs(np.fft.fftn(state.u)) ** 2 + np.abs(np.fft.fftn(state.v)) ** 2
    scale = grid.spacing**grid.dim / grid.node_count
    grad_norm_sq = float(np.sum(grid.k_sq * power) * scale)
    total = float(power.sum())
    tail = float(power[grid.tail_mask].sum() / total) if total > 0 else 0.0
    return grad_norm_sq, tail


def evolve(
    state0: SystemState,
    T: float,
    dt: float,
    model: NoiseModel,
    coupling: Coupling,
    *,
    rng: np.random.Generator | None = None,
    seed: int | None = None,
    increments: np.ndarray | None = None,
    record_every: int = 1,
    recorder=None,
    detector=None,
    track_identities: bool = True,
    dealias: bool = False,
) -> TrajectoryResult:
    """Integrate one path from t=0 to T, recording every ``record_every`` steps.

    The Wiener increments driving the path come from ``increments`` (shape
    (n_steps, K)) when given, else are sampled from ``rng`` (or a fresh
    generator seeded with ``seed``).  The blow-up ``detector``, called every
    step with (grad_norm_sq, tail_fraction), turns a trigger into a normal
    "blowup" outcome.  If T/dt is not an integer the last partial step is
    dropped and reported via ``dropped_remainder``.

    Identical (seed, config) pairs reproduce bit-identical records.
    """
    if T < 0 or dt <= 0:
        raise ValueError("need T >= 0 and dt > 0")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    n_steps = int(np.floor(T / dt + 1e-9))
    effective_T = n_steps * dt
    dropped = max(T - effective_T, 0.0)
    if dropped > 1e-9 * max(dt, 1.0):
        warnings.warn(
            f"T={T} is not a multiple of dt={dt}; integrating to {effective_T}",
            stacklevel=2,
        )

    if increments is not None:
        increments = np.asarray(increments, dtype=float)
        if increments.shape != (n_steps, model.K):
            raise ValueError(
                f"increments must have shape {(n_steps, model.K)}, got {increments.shape}"
            )
    elif rng is None:
        rng = np.random.default_rng(seed)

    if recorder is None:
        from .observables import TrajectoryRecorder

        recorder = TrajectoryRecorder(model, coupling, track_identities=track_identities)

    grid = state0.grid
    state = state0.copy()
    linear_multiplier = np.exp(-1j * grid.k_sq * dt)

    diag = _spectral_diagnostics(state)
    recorder.record(state, *diag)
    if n_steps == 0:
        return TrajectoryResult("completed", state, recorder.finalize(),
                                effective_T=0.0, dropped_remainder=dropped, steps=0)

    for j in range(n_steps):
        inc = increments[j] if increments is not None else sample_increments(model.K, dt, rng)
        recorder.on_step(state, inc)
        state = strang_step(state, dt, model, inc, coupling,
                            linear_multiplier=linear_multiplier, dealias=dealias)

        if state.blown_up:
            return TrajectoryResult("invalid", state, recorder.finalize(), t_star=state.t,
                                    effective_T=effective_T, dropped_remainder=dropped,
                                    steps=j + 1)

        due = (j + 1) % record_every == 0 or j == n_steps - 1
        if detector is None and not due:
            continue
        diag = _spectral_diagnostics(state)
        fired = bool(detector(*diag)) if detector is not None else False
        if fired or due:
            recorder.record(state, *diag)
        if fired:
            return TrajectoryResult("blowup", state, recorder.finalize(), t_star=state.t,
                                    effective_T=effective_T, dropped_remainder=dropped,
                                    steps=j + 1)

    return TrajectoryResult("completed", state, recorder.finalize(),
                            effective_T=effective_T, dropped_remainder=dropped,
                            steps=n_steps)
