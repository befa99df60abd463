"""Periodic lattice geometry and the lattice Fourier transform.

Fields on the lattice ``T_N = {eps * l : l = 0..N-1}`` with ``eps = 2 pi / N``
are represented either by their site values (:class:`LatticeField`) or by
their Fourier coefficients on the symmetric mode set ``K_N = {-(N-1)/2, ...,
(N-1)/2}`` (:class:`SpectralField`).  The transform pair is

    u_hat(k) = eps * sum_l u(x_l) exp(-i k x_l)
    u(x)     = (2 pi)^-1 * sum_k u_hat(k) exp(i k x)

so the inverse transform, read as a trigonometric polynomial in ``x``, is the
band-limited extension of the lattice field to the whole circle.

Coefficient arrays are stored in centered order (index ``K + k`` holds mode
``k``) and may carry leading batch axes; the last axis is always the mode axis.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class GridSpec:
    """Odd-sized periodic lattice on the circle of length 2 pi."""

    N: int

    def __post_init__(self):
        if isinstance(self.N, bool) or int(self.N) != self.N:
            raise TypeError(f"lattice size must be an integer, got {self.N!r}")
        if self.N < 1 or self.N % 2 == 0:
            raise ValueError(f"lattice size must be odd and positive, got {self.N}")
        object.__setattr__(self, "N", int(self.N))

    @property
    def eps(self) -> float:
        return TWO_PI / self.N

    @property
    def K(self) -> int:
        """Largest wavenumber in the mode set."""
        return (self.N - 1) // 2

    @cached_property
    def modes(self) -> np.ndarray:
        return np.arange(-self.K, self.K + 1)

    @cached_property
    def sites(self) -> np.ndarray:
        return self.eps * np.arange(self.N)


@dataclass(frozen=True, eq=False)
class LatticeField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.shape[-1:] != (self.grid.N,):
            raise ValueError(
                f"last axis must have length {self.grid.N}, got shape {values.shape}"
            )
        object.__setattr__(self, "values", values)

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.values)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier coefficients on ``K_N`` in centered order."""

    grid: GridSpec
    coeff: np.ndarray
    real_flag: bool = field(default=False)

    def __post_init__(self):
        coeff = np.asarray(self.coeff, dtype=complex)
        if coeff.shape[-1:] != (self.grid.N,):
            raise ValueError(
                f"last axis must have length {self.grid.N}, got shape {coeff.shape}"
            )
        object.__setattr__(self, "coeff", coeff)

    def __getitem__(self, k):
        """Coefficient of mode ``k`` (integer or integer array)."""
        k = np.asarray(k)
        if np.any(np.abs(k) > self.grid.K):
            raise IndexError(f"mode {k} outside |k| <= {self.grid.K}")
        return self.coeff[..., k + self.grid.K]

    def replace(self, coeff, real_flag=None) -> "SpectralField":
        return SpectralField(
            self.grid, coeff, self.real_flag if real_flag is None else real_flag
        )

    def hermitian_defect(self) -> float:
        """max |u(-k) - conj u(k)|, zero for a real field."""
        return float(np.max(np.abs(self.coeff - np.conj(self.coeff[..., ::-1]))))


def fold_mode(k, grid: GridSpec):
    """Representative of ``k`` modulo ``N`` in ``K_N``."""
    folded = (np.asarray(k) + grid.K) % grid.N - grid.K
    return int(folded) if np.ndim(k) == 0 else folded


def dft_forward(u: LatticeField) -> SpectralField:
    grid = u.grid
    coeff = grid.eps * np.fft.fftshift(np.fft.fft(u.values, axis=-1), axes=-1)
    if u.is_real:
        # enforce exact Hermitian symmetry
        coeff = 0.5 * (coeff + np.conj(coeff[..., ::-1]))
    return SpectralField(grid, coeff, real_flag=u.is_real)


def dft_inverse(f: SpectralField) -> LatticeField:
    grid = f.grid
    values = np.fft.ifft(np.fft.ifftshift(f.coeff, axes=-1), axis=-1) / grid.eps
    if f.real_flag:
        values = values.real
    return LatticeField(grid, values)


def extend(f: SpectralField, x):
    """Evaluate the trigonometric interpolant of ``f`` at points ``x``."""
    x = np.asarray(x, dtype=float)
    phases = np.exp(1j * np.multiply.outer(x, f.grid.modes))
    out = phases @ np.moveaxis(f.coeff, -1, 0).reshape(f.grid.N, -1) / TWO_PI
    out = out.reshape(x.shape + f.coeff.shape[:-1])
    return out.real if f.real_flag else out


def _as_items(coeff_on_Z) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(coeff_on_Z, Mapping):
        ks = np.fromiter(coeff_on_Z.keys(), dtype=np.int64, count=len(coeff_on_Z))
        vals = np.array(list(coeff_on_Z.values()), dtype=complex)
        return ks, vals
    ks, vals = coeff_on_Z
    return np.asarray(ks, dtype=np.int64), np.asarray(vals, dtype=complex)


def periodize(coeff_on_Z, grid: GridSpec, real_flag: bool = False) -> SpectralField:
    """Fold a finitely supported coefficient map on Z onto ``K_N``.

    ``coeff_on_Z`` is either a mapping ``{k: value}`` or a pair of arrays
    ``(modes, values)``.  Coefficients whose modes agree modulo ``N`` are summed.
    """
    ks, vals = _as_items(coeff_on_Z)
    coeff = np.zeros(grid.N, dtype=complex)
    np.add.at(coeff, fold_mode(ks, grid) + grid.K, vals)
    return SpectralField(grid, coeff, real_flag)


def cutoff(coeff_on_Z, N: int) -> dict:
    """Drop every coefficient with ``|k| >= N/2``."""
    ks, vals = _as_items(coeff_on_Z)
    keep = np.abs(ks) < N / 2
    return {int(k): complex(v) for k, v in zip(ks[keep], vals[keep])}


def write_lattice_csv(u: LatticeField, path) -> None:
    if u.values.ndim != 1:
        raise ValueError("CSV export handles a single field")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["site_index", "value_re", "value_im"])
        for i, v in enumerate(u.values):
            v = complex(v)
            w.writerow([i, repr(float(v.real)), repr(float(v.imag))])


def read_lattice_csv(path) -> LatticeField:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    vals = np.array([complex(float(r["value_re"]), float(r["value_im"])) for r in rows])
    order = np.argsort([int(r["site_index"]) for r in rows])
    vals = vals[order]
    if np.all(vals.imag == 0):
        vals = vals.real
    return LatticeField(GridSpec(len(vals)), vals)


def write_spectral_csv(f: SpectralField, path) -> None:
    if f.coeff.ndim != 1:
        raise ValueError("CSV export handles a single field")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "coeff_re", "coeff_im"])
        for k, c in zip(f.grid.modes, f.coeff):
            w.writerow([int(k), repr(float(c.real)), repr(float(c.imag))])


def read_spectral_csv(path, real_flag: bool | None = None) -> SpectralField:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    grid = GridSpec(len(rows))
    coeff = np.zeros(grid.N, dtype=complex)
    for r in rows:
        coeff[int(r["k"]) + grid.K] = complex(float(r["coeff_re"]), float(r["coeff_im"]))
    f = SpectralField(grid, coeff)
    if real_flag is None:
        real_flag = f.hermitian_defect() <= 1e-12 * max(1.0, np.max(np.abs(coeff)))
    return f.replace(coeff, real_flag)
