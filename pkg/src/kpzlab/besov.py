"""Littlewood-Paley blocks, Besov norms and Bony paraproducts.

Fields here are trigonometric polynomials: a :class:`SpectralField` is read
as the finite coefficient map ``k -> u_hat(k)``, ``|k| <= K``, and products
are computed by exact discrete convolution onto a grid wide enough to hold
the full product band.  Nothing is folded.

The partition of unity is one fixed construction: a smooth step built from
``e^{-1/x}``, ``chi = 1`` on ``|x| <= 1`` and ``0`` on ``|x| >= 3/2``, and
``rho(x) = chi(x/2) - chi(x)``, so ``rho_j = rho(2^-j .)`` lives on
``2^j < |k| < 3 * 2^j``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .grid import TWO_PI, GridSpec, SpectralField, dft_inverse


def _psi(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def smooth_step(t):
    """C^infinity step: 0 for t <= 0, 1 for t >= 1."""
    a, b = _psi(t), _psi(1.0 - np.asarray(t, dtype=float))
    return a / (a + b)


def chi(x):
    return 1.0 - smooth_step(2.0 * (np.abs(np.asarray(x, dtype=float)) - 1.0))


def rho(x):
    x = np.asarray(x, dtype=float)
    return chi(x / 2.0) - chi(x)


@dataclass(frozen=True)
class DyadicPartition:
    j_max: int

    def window(self, j: int, k) -> np.ndarray:
        """Weight of block ``j`` (``-1`` for the low block) at integer modes ``k``."""
        k = np.asarray(k, dtype=float)
        if j == -1:
            return chi(k)
        if j < 0 or j > self.j_max:
            raise ValueError(f"block index {j} outside -1..{self.j_max}")
        return rho(k / 2.0 ** j)

    @property
    def blocks(self) -> range:
        return range(-1, self.j_max + 1)

    @property
    def cover(self) -> int:
        """Largest |k| at which the windows sum to one."""
        return 2 ** (self.j_max + 1)

    def table(self, k) -> np.ndarray:
        """All windows stacked, shape (j_max + 2, len(k))."""
        return np.stack([self.window(j, k) for j in self.blocks])


def build_partition(j_max: int) -> DyadicPartition:
    if j_max < 0:
        raise ValueError("j_max must be nonnegative")
    return DyadicPartition(int(j_max))


def partition_for(K: int) -> DyadicPartition:
    """Smallest partition whose windows sum to one on |k| <= K."""
    return build_partition(max(0, math.ceil(math.log2(max(K, 1))) - 1))


def lp_block(u: SpectralField, j: int, partition: DyadicPartition | None = None) -> SpectralField:
    part = partition_for(u.grid.K) if partition is None else partition
    return u.replace(part.window(j, u.grid.modes) * u.coeff)


def _lp_norm(values: np.ndarray, eps: float, p: float) -> np.ndarray:
    a = np.abs(values)
    if math.isinf(p):
        return a.max(axis=-1)
    return (eps * np.sum(a ** p, axis=-1)) ** (1.0 / p)


@dataclass
class BesovProfile:
    js: np.ndarray
    norms: np.ndarray        # (..., n_blocks)
    p: float

    def mean(self) -> "BesovProfile":
        flat = self.norms.reshape(-1, self.norms.shape[-1])
        return BesovProfile(self.js, flat.mean(axis=0), self.p)

    def write_csv(self, path) -> None:
        prof = self.mean() if self.norms.ndim > 1 else self
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["j", "block_norm"])
            for j, b in zip(prof.js, prof.norms):
                w.writerow([int(j), repr(float(b))])


def besov_profile(u: SpectralField, p: float = math.inf,
                  partition: DyadicPartition | None = None) -> BesovProfile:
    part = partition_for(u.grid.K) if partition is None else partition
    windows = part.table(u.grid.modes)                  # (nb, N)
    blocks = u.coeff[..., None, :] * windows           # (..., nb, N)
    vals = dft_inverse(SpectralField(u.grid, blocks)).values
    return BesovProfile(np.array(list(part.blocks)), _lp_norm(vals, u.grid.eps, p), p)


def besov_norm(u: SpectralField, alpha: float, p: float = math.inf, q: float = math.inf,
               partition: DyadicPartition | None = None) -> np.ndarray:
    prof = besov_profile(u, p, partition)
    weighted = 2.0 ** (alpha * prof.js) * prof.norms
    if math.isinf(q):
        return weighted.max(axis=-1)
    return np.sum(weighted ** q, axis=-1) ** (1.0 / q)


# products ---------------------------------------------------------------

def embed(u: SpectralField, N: int) -> SpectralField:
    """Same trigonometric polynomial on a grid of size N >= u.grid.N (zero padded)."""
    if N < u.grid.N:
        raise ValueError(f"cannot embed a band of size {u.grid.N} into {N} modes")
    pad = (N - u.grid.N) // 2
    widths = [(0, 0)] * (u.coeff.ndim - 1) + [(pad, pad)]
    return SpectralField(GridSpec(N), np.pad(u.coeff, widths), u.real_flag)


def product(f: SpectralField, g: SpectralField, N_out: int | None = None) -> SpectralField:
    """Exact product of trigonometric polynomials: (2 pi)^-1 (f_hat * g_hat)."""
    need = 2 * (f.grid.K + g.grid.K) + 1
    if N_out is None:
        N_out = need
    if N_out < need:
        raise ValueError(f"output grid of {N_out} modes cannot hold the product band ({need})")
    batch = np.broadcast_shapes(f.coeff.shape[:-1], g.coeff.shape[:-1])
    fc = np.broadcast_to(f.coeff, batch + f.coeff.shape[-1:])
    gc = np.broadcast_to(g.coeff, batch + g.coeff.shape[-1:])
    out = np.empty(batch + (need,), dtype=complex)
    for idx in np.ndindex(*batch):
        out[idx] = np.convolve(fc[idx], gc[idx]) / TWO_PI
    return embed(SpectralField(GridSpec(need), out, f.real_flag and g.real_flag), N_out)


@dataclass
class Paraproducts:
    less: SpectralField
    greater: SpectralField
    resonant: SpectralField

    def total(self) -> SpectralField:
        return self.less.replace(self.less.coeff + self.greater.coeff + self.resonant.coeff)


def _blocks(u: SpectralField, part: DyadicPartition) -> list[SpectralField]:
    return [lp_block(u, j, part) for j in part.blocks]


def _zero(N: int, real: bool) -> SpectralField:
    return SpectralField(GridSpec(N), np.zeros(N, dtype=complex), real)


def paraproducts(f: SpectralField, g: SpectralField, N_out: int | None = None,
                 partition: DyadicPartition | None = None) -> Paraproducts:
    """f < g = sum_j S_{j-1} f D_j g,  f > g = g < f,  f o g = sum_{|i-j|<=1} D_i f D_j g.

    ``S_{j-1} = sum_{i <= j-2} D_i``; the three parts add up to fg exactly.
    """
    need = 2 * (f.grid.K + g.grid.K) + 1
    N_out = need if N_out is None else N_out
    if N_out < need:
        raise ValueError(f"output grid of {N_out} modes cannot hold the product band ({need})")
    part = partition_for(max(f.grid.K, g.grid.K)) if partition is None else partition
    if part.cover < max(f.grid.K, g.grid.K):
        raise ValueError("partition does not cover the input bands")
    F, G = _blocks(f, part), _blocks(g, part)
    real = f.real_flag and g.real_flag
    n = len(F)

    def acc(pairs):
        out = _zero(N_out, real).coeff
        for i, j in pairs:
            out = out + product(F[i], G[j], N_out).coeff
        return SpectralField(GridSpec(N_out), out, real)

    # list position a holds block a - 1
    less = acc((i, j) for j in range(n) for i in range(n) if i <= j - 2)
    greater = acc((i, j) for i in range(n) for j in range(n) if j <= i - 2)
    resonant = acc((i, j) for i in range(n) for j in range(n) if abs(i - j) <= 1)
    return Paraproducts(less, greater, resonant)


def commutator(f: SpectralField, g: SpectralField, h: SpectralField) -> SpectralField:
    """C(f, g, h) = (f < g) o h - f (g o h), exact on trigonometric polynomials."""
    N_out = 2 * (f.grid.K + g.grid.K + h.grid.K) + 1
    first = paraproducts(paraproducts(f, g).less, h, N_out).resonant
    second = product(f, paraproducts(g, h).resonant, N_out)
    return first.replace(first.coeff - second.coeff)


def sup_norm(u: SpectralField) -> np.ndarray:
    return np.max(np.abs(dft_inverse(u).values), axis=-1)


# regularity regression --------------------------------------------------

@dataclass
class RegularityFit:
    alpha_hat: float
    r_squared: float
    fit_range: tuple
    profile: BesovProfile

    def as_dict(self) -> dict:
        return {"alpha_hat": self.alpha_hat, "r_squared": self.r_squared,
                "fit_range": list(self.fit_range)}

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.as_dict(), fh, indent=2, sort_keys=True)


def estimate_regularity(ensemble: SpectralField, p: float = math.inf, fit_range=None,
                        partition: DyadicPartition | None = None) -> RegularityFit:
    """Slope of log2(mean block norm) against j; alpha_hat = -slope."""
    part = partition_for(ensemble.grid.K) if partition is None else partition
    prof = besov_profile(ensemble, p, part).mean()
    if fit_range is None:
        fit_range = (3, part.j_max - 2)
    lo, hi = int(fit_range[0]), int(fit_range[1])
    if lo < -1 or hi > part.j_max or hi - lo < 1:
        raise ValueError(f"fit range {fit_range} outside the available blocks -1..{part.j_max}")
    sel = (prof.js >= lo) & (prof.js <= hi)
    x, y = prof.js[sel].astype(float), np.log2(prof.norms[sel])
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return RegularityFit(float(-slope), float(r2), (lo, hi), prof)
