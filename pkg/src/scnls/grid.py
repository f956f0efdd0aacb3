"""Periodic-box spectral discretization.

Conventions (fixed once, used everywhere):

* The box is ``[-L/2, L/2)^dim`` sampled at ``n`` equispaced nodes per axis,
  ``x_j = -L/2 + j*L/n``.
* Forward FFT carries no prefactor, the inverse carries ``1/n^dim``
  (numpy's default "backward" normalization).
* The Laplacian has Fourier symbol ``-|k|^2`` with ``k_m = 2*pi*m/L`` and
  ``m`` the signed integer frequency, so the free flow ``exp(i*t*Lap)``
  multiplies mode ``k`` by ``exp(-1j*|k|^2*t)``.
* Integrals are the rectangle rule ``sum(samples) * spacing^dim``, which on a
  periodic grid is the trapezoid rule and is spectrally accurate for smooth
  periodic integrands.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Grid", "make_grid"]


class Grid:
    """Uniform periodic grid on ``[-L/2, L/2)^dim`` with wavenumber tables.

    Attributes:
        dim: spatial dimension, 1 or 2.
        n: nodes per axis (power of two, >= 8).
        length: box length L (same on every axis).
        spacing: L / n.
        shape: array shape of a field on this grid.
        x: tuple of coordinate meshes, one per axis, each of shape ``shape``.
        r_sq: ``|x|^2`` mesh (sum of squared centered coordinates).
        k: tuple of wavenumber meshes, one per axis.
        k_sq: ``|k|^2`` mesh.
    """

    def __init__(self, dim: int, n: int, length: float):
        if dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {dim}")
        if n < 8 or (n & (n - 1)) != 0:
            raise ValueError(f"n must be a power of two >= 8, got {n}")
        length = float(length)
        if not np.isfinite(length) or length <= 0:
            raise ValueError(f"box length must be positive, got {length}")

        self.dim = dim
        self.n = n
        self.length = length
        self.spacing = length / n
        self.shape = (n,) * dim
        self.node_count = n**dim

        axis_x = -0.5 * length + self.spacing * np.arange(n)
        axis_k = 2.0 * np.pi * np.fft.fftfreq(n, d=self.spacing)
        axis_m = np.rint(np.fft.fftfreq(n) * n).astype(int)  # signed freq index
        # the unpaired Nyquist mode carries no usable odd-derivative
        # information for real data; drop it from first-derivative multipliers
        axis_k_deriv = axis_k.copy()
        axis_k_deriv[n // 2] = 0.0

        if dim == 1:
            self.x = (axis_x,)
            self.k = (axis_k,)
            self._k_deriv = (axis_k_deriv,)
            m_inf = np.abs(axis_m)
        else:
            xa, xb = np.meshgrid(axis_x, axis_x, indexing="ij")
            ka, kb = np.meshgrid(axis_k, axis_k, indexing="ij")
            da, db = np.meshgrid(axis_k_deriv, axis_k_deriv, indexing="ij")
            ma, mb = np.meshgrid(np.abs(axis_m), np.abs(axis_m), indexing="ij")
            self.x = (xa, xb)
            self.k = (ka, kb)
            self._k_deriv = (da, db)
            m_inf = np.maximum(ma, mb)

        self.r_sq = sum(c**2 for c in self.x)
        self.k_sq = sum(c**2 for c in self.k)
        # top third of resolvable frequencies, used as a resolution-loss gauge
        self.tail_mask = m_inf > n / 3.0

    # -- transforms ---------------------------------------------------------

    def fft(self, values: np.ndarray) -> np.ndarray:
        return np.fft.fftn(values)

    def ifft(self, coeffs: np.ndarray) -> np.ndarray:
        return np.fft.ifftn(coeffs)

    def free_propagate(self, values: np.ndarray, dt: float) -> np.ndarray:
        """Apply the free flow ``exp(i*dt*Lap)``: multiply mode k by exp(-i|k|^2 dt).

        Exactly unitary on the grid; dt may be negative (time reversal).
        """
        if not np.all(np.isfinite(values)):
            raise ValueError("free_propagate requires a finite field")
        return np.fft.ifftn(np.fft.fftn(values) * np.exp(-1j * self.k_sq * dt))

    def gradient(self, values: np.ndarray) -> list[np.ndarray]:
        """Spectral gradient: Fourier multiplier ``i*k`` per axis.

        The Nyquist frequency is excluded from the multiplier so that real
        input yields a real-valued derivative to round-off.
        """
        coeffs = np.fft.fftn(values)
        return [np.fft.ifftn(1j * ka * coeffs) for ka in self._k_deriv]

    # -- quadrature ---------------------------------------------------------

    def quadrature(self, samples: np.ndarray) -> float:
        """Rectangle-rule integral ``sum(samples) * spacing^dim``."""
        return samples.sum() * self.spacing**self.dim

    def norm_sq(self, values: np.ndarray) -> float:
        """Discrete squared L2 norm, ``integral |values|^2``."""
        return float(self.quadrature(np.abs(values) ** 2))

    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask: True on modes kept after dealiasing (|m| <= n/3 per axis)."""
        return ~self.tail_mask

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Grid)
            and self.dim == other.dim
            and self.n == other.n
            and self.length == other.length
        )

    def __repr__(self) -> str:
        return f"Grid(dim={self.dim}, n={self.n}, length={self.length})"


def make_grid(dim: int, n: int, length: float) -> Grid:
    """Build a periodic grid; rejects dim not in {1,2}, non-power-of-two n, L <= 0."""
    return Grid(dim, n, length)
