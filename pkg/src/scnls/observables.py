"""Monitored functionals and identity checks along trajectories.

Four functionals of the field pair are tracked:

    M = integral |u|^2 + |v|^2
    H = 1/2 integral |grad u|^2 + |grad v|^2
        - 1/(2+2s) integral l11|u|^(2+2s) + l22|v|^(2+2s) + 2 l12 |v|^(s+1)|u|^(s+1)
    V = integral |x|^2 (|u|^2 + |v|^2)
    G = Im integral u x.grad(conj u) + v x.grad(conj v)

Along a path, M is exactly conserved by the scheme.  H evolves by an Ito
martingale plus a drift; two candidate drift kernels are computed side by
side, one built from the noise intensity fields F_i (the "paper" kernel) and
one from the mode gradients (the "gradient" kernel):

    paper:    1/2 integral |u|^2 F_1 + |v|^2 F_2 + 2|uv| sqrt(F_1 F_2)
    gradient: 1/2 sum_k integral |u|^2 |grad g_{1,k}|^2 + |v|^2 |grad g_{2,k}|^2

The two disagree on a closed-form test path (a single spatially constant
mode), so both residuals are always reported and neither is asserted as
ground truth.  With the momentum oriented as g = Im integral conj(u)
x.grad(u) + conj(v) x.grad(v) (the negative of the G ordering above, see
:func:`virial_residuals`), V and g satisfy

    V(t) = V(0) + 4 integral_0^t g ds                        (exact pathwise)
    g(t) = g(0) + 4 integral H ds
         + (2 - s*N)/(s+1) integral [l11|u|^(2s+2) + l22|v|^(2s+2)
                                     + 2 l21 |u|^(s+1)|v|^(s+1)] ds
         - sum_k integral (integral |u|^2 x.grad g_{1,k}
                           + |v|^2 x.grad g_{2,k} dx) dB_k

Martingale sums are accumulated every step with left-point (Ito) evaluation
and the exact increment that drove the step; time integrals of drift kernels
use the trapezoid rule on the recorded cadence.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .dynamics import Coupling, SystemState
from .noise import NoiseModel

__all__ = [
    "mass",
    "hamiltonian",
    "variance",
    "momentum_G",
    "TrajectoryRecorder",
    "TrajectoryRecord",
    "EnergyBudget",
    "energy_budget",
    "virial_residuals",
    "CriterionResult",
    "criterion_lhs",
    "blowup_criterion",
    "corollary_energy_bound",
]


# -- pointwise functionals ---------------------------------------------------


def mass(state: SystemState) -> tuple[float, float, float]:
    """Component masses (integral |u|^2, integral |v|^2) and their sum."""
    grid = state.grid
    mu = grid.norm_sq(state.u)
    mv = grid.norm_sq(state.v)
    return mu, mv, mu + mv


def hamiltonian(state: SystemState, coupling: Coupling) -> float:
    """Energy functional; kinetic part via the spectral symbol |k|^2."""
    grid = state.grid
    s = coupling.sigma
    scale = grid.spacing**grid.dim / grid.node_count
    kin = 0.0
    for f in (state.u, state.v):
        kin += float(np.sum(grid.k_sq * np.abs(np.fft.fftn(f)) ** 2) * scale)
    au = np.abs(state.u)
    av = np.abs(state.v)
    quartic = (
        coupling.l11 * au ** (2.0 * s + 2.0)
        + coupling.l22 * av ** (2.0 * s + 2.0)
        + 2.0 * coupling.l12 * (au * av) ** (s + 1.0)
    )
    return 0.5 * kin - grid.quadrature(quartic) / (2.0 + 2.0 * s)


def variance(state: SystemState, warn_boundary: bool = True) -> float:
    """Second moment integral |x|^2 (|u|^2 + |v|^2) with centered coordinates.

    Meaningful only while the fields decay before the box boundary; if the
    outermost shell carries a mass fraction >= 1e-8 a warning is emitted.
    """
    grid = state.grid
    density = np.abs(state.u) ** 2 + np.abs(state.v) ** 2
    if warn_boundary:
        shell_width = max(4.0 * grid.spacing, 0.02 * grid.length)
        shell = np.zeros(grid.shape, dtype=bool)
        for xa in grid.x:
            shell |= np.abs(xa) >= 0.5 * grid.length - shell_width
        total = density.sum()
        if total > 0 and density[shell].sum() / total >= 1e-8:
            warnings.warn(
                "boundary shell carries a non-negligible mass fraction; "
                "the second moment is contaminated by the periodic box",
                stacklevel=2,
            )
    return float(grid.quadrature(grid.r_sq * density))


def momentum_G(state: SystemState) -> float:
    """G = Im integral u x.grad(conj u) + v x.grad(conj v)."""
    grid = state.grid
    total = 0.0j
    for f in (state.u, state.v):
        grads = grid.gradient(f)
        xdot = sum(xa * np.conj(da) for xa, da in zip(grid.x, grads))
        total += grid.quadrature(f * xdot)
    return float(np.imag(total))


def _coupling_quartic(state: SystemState, coupling: Coupling) -> float:
    """integral l11|u|^(2s+2) + l22|v|^(2s+2) + 2 l21 |u|^(s+1)|v|^(s+1)."""
    s = coupling.sigma
    au = np.abs(state.u)
    av = np.abs(state.v)
    integrand = (
        coupling.l11 * au ** (2.0 * s + 2.0)
        + coupling.l22 * av ** (2.0 * s + 2.0)
        + 2.0 * coupling.l21 * (au * av) ** (s + 1.0)
    )
    return float(state.grid.quadrature(integrand))


# -- trajectory recording ----------------------------------------------------

CSV_COLUMNS = (
    "t", "mass_u", "mass_v", "H", "V", "G", "grad_norm_sq",
    "spectral_tail_fraction", "residual_energy_paper",
    "residual_energy_gradient", "residual_V", "residual_G",
)


@dataclass
class TrajectoryRecord:
    """Time series of the monitored functionals plus identity accumulators.

    ``stoch_energy`` and ``stoch_G`` are the running Ito sums of the
    martingale terms in the energy and momentum identities, sampled at the
    record times; they are accumulated every step regardless of the record
    cadence.  ``tracked`` is False when the run was made without identity
    accumulation, in which case the budget checks refuse the record.
    """

    t: np.ndarray
    mass_u: np.ndarray
    mass_v: np.ndarray
    H: np.ndarray
    V: np.ndarray
    G: np.ndarray
    grad_norm_sq: np.ndarray
    spectral_tail_fraction: np.ndarray
    paper_kernel: np.ndarray
    gradient_kernel: np.ndarray
    coupling_quartic: np.ndarray
    stoch_energy: np.ndarray
    stoch_G: np.ndarray
    sigma: float
    dim: int
    tracked: bool

    def __len__(self) -> int:
        return len(self.t)


class TrajectoryRecorder:
    """Accumulates observable rows and the per-step Ito martingale sums.

    ``on_step(state, increments)`` must be called with the pre-step state and
    the exact Wiener increments about to drive the step (left-point
    evaluation); ``record(state, grad_norm_sq, tail)`` appends one row.
    """

    def __init__(self, model: NoiseModel, coupling: Coupling, track_identities: bool = True):
        self.model = model
        self.coupling = coupling
        self.track = bool(track_identities)
        self._stoch_energy = 0.0
        self._stoch_G = 0.0
        self._rows: dict[str, list[float]] = {
            name: []
            for name in (
                "t", "mass_u", "mass_v", "H", "V", "G", "grad_norm_sq",
                "spectral_tail_fraction", "paper_kernel", "gradient_kernel",
                "coupling_quartic", "stoch_energy", "stoch_G",
            )
        }

    def on_step(self, state: SystemState, increments: np.ndarray) -> None:
        if not self.track or self.model.K == 0:
            return
        grid = state.grid
        h = grid.spacing**grid.dim
        energy_terms = np.zeros(self.model.K)
        moment_terms = np.zeros(self.model.K)
        K = self.model.K
        for f, grad_modes, xdot in (
            (state.u, self.model.grad_modes_u, self.model.xdot_grad_u),
            (state.v, self.model.grad_modes_v, self.model.xdot_grad_v),
        ):
            # Im integral conj(f) grad(f) . grad(g_k) dx, one value per mode
            flux = (np.conj(f) * np.stack(grid.gradient(f))).reshape(grid.dim, -1)
            energy_terms += np.imag(
                np.einsum("dm,kdm->k", flux, grad_modes.reshape(K, grid.dim, -1))
            ) * h
            moment_terms += xdot.reshape(K, -1) @ (np.abs(f) ** 2).ravel() * h
        # energy identity: H(t) = H(0) - sum_k Im(...) dB_k + drift
        self._stoch_energy += float(-energy_terms @ increments)
        self._stoch_G += float(moment_terms @ increments)

    def record(self, state: SystemState, grad_norm_sq: float, tail: float) -> None:
        grid = state.grid
        mu, mv, _ = mass(state)
        au = np.abs(state.u)
        av = np.abs(state.v)
        dens_u = au**2
        dens_v = av**2
        paper = 0.5 * grid.quadrature(
            dens_u * self.model.F_u
            + dens_v * self.model.F_v
            + 2.0 * au * av * np.sqrt(self.model.F_u * self.model.F_v)
        )
        gradient = 0.5 * grid.quadrature(
            dens_u * self.model.grad_sq_sum_u + dens_v * self.model.grad_sq_sum_v
        )
        rows = self._rows
        rows["t"].append(state.t)
        rows["mass_u"].append(mu)
        rows["mass_v"].append(mv)
        rows["H"].append(hamiltonian(state, self.coupling))
        rows["V"].append(variance(state, warn_boundary=False))
        rows["G"].append(momentum_G(state))
        rows["grad_norm_sq"].append(grad_norm_sq)
        rows["spectral_tail_fraction"].append(tail)
        rows["paper_kernel"].append(float(paper))
        rows["gradient_kernel"].append(float(gradient))
        rows["coupling_quartic"].append(_coupling_quartic(state, self.coupling))
        rows["stoch_energy"].append(self._stoch_energy)
        rows["stoch_G"].append(self._stoch_G)

    def finalize(self) -> TrajectoryRecord:
        arrays = {name: np.asarray(col) for name, col in self._rows.items()}
        return TrajectoryRecord(
            **arrays,
            sigma=self.coupling.sigma,
            dim=self.model.grid.dim,
            tracked=self.track,
        )


def _cumulative_trapezoid(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    if len(t) < 2:
        return np.zeros_like(np.asarray(y, dtype=float))
    inc = 0.5 * (y[1:] + y[:-1]) * np.diff(t)
    return np.concatenate(([0.0], np.cumsum(inc)))


@dataclass
class EnergyBudget:
    """Residual series of the energy identity for both drift kernels."""

    t: np.ndarray
    paper: np.ndarray
    gradient: np.ndarray
    martingale: np.ndarray
    drift_paper: np.ndarray
    drift_gradient: np.ndarray


def energy_budget(record: TrajectoryRecord, kernel_variant: str | None = None):
    """residual(t) = H(t) - H(0) - [martingale sum] - [drift integral].

    Returns the full :class:`EnergyBudget` (both kernels), or a single
    residual series when ``kernel_variant`` is "paper" or "gradient".
    Rejects records produced without identity tracking.
    """
    if not record.tracked:
        raise ValueError("trajectory was recorded without increments; "
                         "re-run with identity tracking enabled")
    t = record.t
    dh = record.H - record.H[0]
    drift_paper = _cumulative_trapezoid(record.paper_kernel, t)
    drift_gradient = _cumulative_trapezoid(record.gradient_kernel, t)
    budget = EnergyBudget(
        t=t,
        paper=dh - record.stoch_energy - drift_paper,
        gradient=dh - record.stoch_energy - drift_gradient,
        martingale=record.stoch_energy.copy(),
        drift_paper=drift_paper,
        drift_gradient=drift_gradient,
    )
    if kernel_variant is None:
        return budget
    if kernel_variant == "paper":
        return budget.paper
    if kernel_variant == "gradient":
        return budget.gradient
    raise ValueError(f"kernel_variant must be 'paper' or 'gradient', got {kernel_variant!r}")


def virial_residuals(record: TrajectoryRecord) -> tuple[np.ndarray, np.ndarray]:
    """Residual series of the two virial identities.

    residual_V(t) = V(t) - V(0) - 4 integral G ds
    residual_G(t) = G(t) - G(0) - 4 integral H ds
                    - (2 - s*N)/(s+1) integral (coupling quartic) ds
                    - [martingale sum]

    The identities hold with the momentum oriented as Im integral conj(u)
    x.grad(u) (+ the v term), which is the negative of the recorded G column
    (that column keeps the ``u x.grad(conj u)`` ordering of
    :func:`momentum_G`); the compensating sign is applied here, so both
    residuals converge to zero under refinement.  The martingale accumulator
    is recorded in the ``u x.grad(conj u)`` ordering as well and enters with
    the matching sign.
    """
    if not record.tracked:
        raise ValueError("trajectory was recorded without increments; "
                         "re-run with identity tracking enabled")
    t = record.t
    g_series = -record.G  # identity-consistent orientation
    res_v = record.V - record.V[0] - 4.0 * _cumulative_trapezoid(g_series, t)
    coeff = (2.0 - record.sigma * record.dim) / (record.sigma + 1.0)
    res_g = (
        g_series
        - g_series[0]
        - 4.0 * _cumulative_trapezoid(record.H, t)
        - coeff * _cumulative_trapezoid(record.coupling_quartic, t)
        + record.stoch_G
    )
    return res_v, res_g


# -- blow-up criterion ------------------------------------------------------


@dataclass
class CriterionResult:
    lhs: float
    verdict: bool
    t_bar: float
    V0: float
    G0: float
    H0: float
    M0: float
    min_sup_F: float
    stderr: float | None = None


def criterion_lhs(V0: float, G0: float, H0: float, M0: float,
                  min_sup_F: float, t_bar: float) -> float:
    """V0 + 4 G0 tbar + 8 H0 tbar^2 + (4/3) tbar^3 min_i sup F_i M0."""
    if t_bar <= 0:
        raise ValueError(f"t_bar must be positive, got {t_bar}")
    return (
        V0
        + 4.0 * G0 * t_bar
        + 8.0 * H0 * t_bar**2
        + (4.0 / 3.0) * t_bar**3 * min_sup_F * M0
    )


def blowup_criterion(
    states,
    coupling: Coupling,
    t_bar: float,
    model: NoiseModel,
    check_hypotheses: bool = True,
) -> CriterionResult:
    """Evaluate the blow-up criterion polynomial at horizon ``t_bar``.

    ``states`` is a single initial :class:`SystemState` or a sequence of them;
    for a sequence the functionals are sample means and the standard error of
    the lhs is reported.  A negative lhs certifies positive blow-up
    probability by ``t_bar`` only under the hypotheses sigma*N >= 2 and a
    (entrywise) negative coefficient matrix; outside them a warning is
    emitted and the arithmetic is still returned.
    """
    if t_bar <= 0:
        raise ValueError(f"t_bar must be positive, got {t_bar}")
    if isinstance(states, SystemState):
        ensemble = [states]
    else:
        ensemble = list(states)
        if not ensemble:
            raise ValueError("need at least one initial state")
    if check_hypotheses:
        dim = ensemble[0].grid.dim
        if coupling.sigma * dim < 2:
            warnings.warn(
                "criterion evaluated below the mass-critical exponent "
                "(sigma*N < 2); a negative value carries no blow-up guarantee "
                "in this regime",
                stacklevel=2,
            )
        if np.any(coupling.lam >= 0):
            warnings.warn(
                "criterion evaluated with a coefficient matrix that is not "
                "entrywise negative; a negative value carries no blow-up "
                "guarantee under these coefficients",
                stacklevel=2,
            )

    samples = []
    for st in ensemble:
        m = mass(st)[2]
        # the polynomial bounds V(t) through the virial identities, so the
        # momentum enters in the identity-consistent orientation -momentum_G
        samples.append((
            variance(st, warn_boundary=False),
            -momentum_G(st),
            hamiltonian(st, coupling),
            m,
        ))
    arr = np.asarray(samples)
    V0, G0, H0, M0 = arr.mean(axis=0)
    lhs = criterion_lhs(V0, G0, H0, M0, model.min_sup_F, t_bar)
    stderr = None
    if len(ensemble) > 1:
        per_path = np.array([
            criterion_lhs(v, g, h, m, model.min_sup_F, t_bar) for v, g, h, m in samples
        ])
        stderr = float(per_path.std(ddof=1) / np.sqrt(len(per_path)))
    return CriterionResult(
        lhs=float(lhs), verdict=bool(lhs < 0), t_bar=t_bar,
        V0=float(V0), G0=float(G0), H0=float(H0), M0=float(M0),
        min_sup_F=model.min_sup_F, stderr=stderr,
    )


def corollary_energy_bound(m_bar: float, t_bar: float, min_sup_F: float) -> float:
    """Energy depth H_bar making the negative-energy set nonempty.

    Returns the H_bar for which Mbar + 4 tbar Mbar - 8 tbar^2 Hbar
    + (4/3) tbar^3 min_i(sup F_i) Mbar = 0; any strictly larger H_bar makes
    the expression negative, so states with V, G, M < Mbar and H < -Hbar
    satisfy the criterion by ``t_bar``.
    """
    if m_bar <= 0 or t_bar <= 0:
        raise ValueError("need m_bar > 0 and t_bar > 0")
    return m_bar * (1.0 + 4.0 * t_bar + (4.0 / 3.0) * t_bar**3 * min_sup_F) / (8.0 * t_bar**2)
