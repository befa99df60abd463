"""Space-time white noise in Fourier form, mollifiers and stationary data.

Convention: the per-mode white-noise increment over a step ``dt`` has
``E|dW(k)|^2 = 2 pi dt``.  For ``k > 0`` real and imaginary parts are
independent with variance ``pi dt`` each, ``dW(-k) = conj dW(k)`` and
``dW(0)`` is real with variance ``2 pi dt``.  Every downstream constant
(OU variance ``pi |g|^2 / f``, the lattice constant ``c_N``) is stated in
this convention.

Randomness is counter based: the normals used at step ``n`` of stream
``(seed, stream_id)`` are a pure function of those three numbers and the
number of values drawn, so replicas can be run in any order or in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .grid import TWO_PI, GridSpec, LatticeField, SpectralField
from .operators import Scheme, validate

# steps generated per Philox counter block
BLOCK = 64


class NoiseStream:
    """Reproducible standard-normal source addressed by (seed, stream_id, step)."""

    def __init__(self, seed: int, stream_id: int = 0, counter: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.counter = int(counter)
        self._cache_key = None
        self._cache = None

    def __repr__(self):
        return f"NoiseStream(seed={self.seed}, stream_id={self.stream_id}, counter={self.counter})"

    def _block(self, b: int, n: int) -> np.ndarray:
        if self._cache_key != (b, n):
            self._cache = self._generator([0, 0, b, n]).standard_normal((BLOCK, n))
            self._cache_key = (b, n)
        return self._cache

    def _generator(self, counter) -> np.random.Generator:
        key = np.array([self.seed % 2**64, self.stream_id % 2**64], dtype=np.uint64)
        bits = np.random.Philox(key=key, counter=np.array(counter, dtype=np.uint64))
        return np.random.Generator(bits)

    def normals_at(self, step: int, n: int) -> np.ndarray:
        """The ``n`` normals of step ``step``; does not move the counter."""
        if step < 0:
            raise ValueError("step index must be nonnegative")
        b, r = divmod(int(step), BLOCK)
        return self._block(b, n)[r].copy()

    def next(self, n: int) -> np.ndarray:
        out = self.normals_at(self.counter, n)
        self.counter += 1
        return out

    def bulk(self, shape) -> np.ndarray:
        """One large uncached draw at the current step (counter word 1 separates it)."""
        out = self._generator([0, 1, self.counter, 0]).standard_normal(shape)
        self.counter += 1
        return out

    def spawn(self, stream_id: int) -> "NoiseStream":
        return NoiseStream(self.seed, stream_id)


class EnsembleNoise:
    """Stacked normals for a list of replica streams, shape (R, n)."""

    def __init__(self, streams: Sequence[NoiseStream]):
        self.streams = list(streams)
        self._key = None
        self._cache = None

    def __len__(self):
        return len(self.streams)

    def normals_at(self, step: int, n: int) -> np.ndarray:
        b, r = divmod(int(step), BLOCK)
        if self._key != (b, n):
            self._cache = np.stack([s._block(b, n) for s in self.streams], axis=1)
            self._key = (b, n)
        return self._cache[r]


def white_coeffs(normals: np.ndarray, grid: GridSpec, dt: float) -> np.ndarray:
    """Map ``N`` standard normals (last axis) to white-noise increment coefficients."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    K = grid.K
    z = np.asarray(normals, dtype=float)
    out = np.empty(z.shape[:-1] + (grid.N,), dtype=complex)
    sd = np.sqrt(np.pi * dt)
    pos = sd * (z[..., 1:K + 1] + 1j * z[..., K + 1:2 * K + 1])
    out[..., K + 1:] = pos
    out[..., :K] = np.conj(pos[..., ::-1])
    out[..., K] = np.sqrt(2.0) * sd * z[..., 0]
    return out


def white_increment(grid: GridSpec, dt: float, stream: NoiseStream) -> SpectralField:
    return SpectralField(grid, white_coeffs(stream.next(grid.N), grid, dt), real_flag=True)


# mollifiers -------------------------------------------------------------

def _indicator(x):
    return (np.abs(np.asarray(x, dtype=float)) <= 1.0).astype(float)


def _bump(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    xi = x[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - xi * xi))
    return out


def _bump_derivative(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    xi = x[inside]
    out[inside] = -2 * xi / (1.0 - xi * xi) ** 2 * np.exp(1.0 - 1.0 / (1.0 - xi * xi))
    return out


def _zero(x):
    return np.zeros_like(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class Mollifier:
    name: str
    phi: Callable
    radius: float = 1.0
    # derivative of phi; None means piecewise constant (zero almost everywhere)
    dphi: Callable | None = None

    def __call__(self, x):
        return self.phi(x)

    def derivative(self, x):
        return _zero(x) if self.dphi is None else self.dphi(x)


MOLLIFIERS = {
    "indicator": Mollifier("indicator", _indicator, 1.0),
    "bump": Mollifier("bump", _bump, 1.0, _bump_derivative),
}


def get_mollifier(m) -> Mollifier:
    if isinstance(m, Mollifier):
        return m
    try:
        return MOLLIFIERS[m]
    except KeyError:
        raise ValueError(f"unknown mollifier {m!r}; choose from {sorted(MOLLIFIERS)}") from None


def mollifier_weights(m, grid: GridSpec, eps_reg: float) -> np.ndarray:
    return get_mollifier(m)(eps_reg * grid.modes)


def apply_mollifier(m, u: SpectralField, eps_reg: float) -> SpectralField:
    return u.replace(mollifier_weights(m, u.grid, eps_reg) * u.coeff)


# stationary data --------------------------------------------------------

def ou_variance(grid: GridSpec, scheme: Scheme) -> np.ndarray:
    """Stationary E|X(k)|^2 = pi |g(eps k)|^2 / f(eps k), zero at k = 0."""
    x = grid.eps * grid.modes
    var = np.pi * np.abs(scheme.g(x)) ** 2 / scheme.f(x)
    var[grid.K] = 0.0
    return var


def ou_coeffs(normals: np.ndarray, grid: GridSpec, scheme: Scheme) -> np.ndarray:
    # white_coeffs with dt = 1 has E|.|^2 = 2 pi per mode
    return white_coeffs(normals, grid, 1.0) * np.sqrt(ou_variance(grid, scheme) / TWO_PI)


def stationary_ou_init(grid: GridSpec, scheme: Scheme, stream: NoiseStream) -> SpectralField:
    rep = validate(scheme)
    if not rep.h_f:
        raise ValueError(f"scheme {scheme.name!r} fails (H_f): {rep.failures()}")
    return SpectralField(grid, ou_coeffs(stream.next(grid.N), grid, scheme), real_flag=True)


def invariant_sample(grid: GridSpec, m: float, stream: NoiseStream) -> LatticeField:
    """Draw from the product measure with iid N(m, 1/(2 eps)) site values."""
    sd = np.sqrt(0.5 / grid.eps)
    return LatticeField(grid, m + sd * stream.next(grid.N))
