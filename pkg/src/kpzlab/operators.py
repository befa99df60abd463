"""Lattice discretizations of the Laplacian, derivative and pointwise product.

A :class:`Scheme` is given by three finitely supported measures

    Laplacian   Delta_N u(x)  = eps^-2 sum_y pi_y u(x + eps y)
    derivative  D_N u(x)      = eps^-1 sum_y nu_y u(x + eps y)
    product     B_N(u, v)(x)  = sum_{y,z} mu_{y,z} u(x + eps y) v(x + eps z)

which act in Fourier space through the symbols

    f(x) = -sum_y pi_y e^{ixy} / x^2,   g(x) = sum_y nu_y e^{ixy} / (ix),
    h(x1, x2) = sum_{y,z} mu_{y,z} e^{i(x1 y + x2 z)}.

The symbols are evaluated through ``sinc`` forms so that the removable
singularity at ``x = 0`` never requires dividing small numbers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .grid import TWO_PI, GridSpec, LatticeField, SpectralField, dft_forward, dft_inverse

# resolution of the positivity check for f on [-pi, pi]
F_GRID_POINTS = 10_000
MOMENT_TOL = 1e-12
# f must exceed this on [-pi, pi]; smaller values are rounding noise around a zero
POSITIVITY_TOL = 1e-10


def _items1(measure) -> tuple[tuple[int, float], ...]:
    if isinstance(measure, Mapping):
        measure = measure.items()
    return tuple(sorted((int(y), float(w)) for y, w in measure if w != 0))


def _items2(measure) -> tuple[tuple[int, int, float], ...]:
    if isinstance(measure, Mapping):
        measure = ((y, z, w) for (y, z), w in measure.items())
    return tuple(sorted((int(y), int(z), float(w)) for y, z, w in measure if w != 0))


@dataclass(frozen=True)
class Scheme:
    """Discretization triple (pi, nu, mu).

    ``pi=None`` (resp. ``nu=None``) stands for the exact multiplier
    ``f = 1`` (resp. ``g = 1``) on the lattice band, i.e. the spectral
    Laplacian and derivative.  Such schemes have no finite stencil.
    """

    pi: tuple | None
    nu: tuple | None
    mu: tuple
    name: str = "custom"

    def __post_init__(self):
        if self.pi is not None:
            object.__setattr__(self, "pi", _items1(self.pi))
        if self.nu is not None:
            object.__setattr__(self, "nu", _items1(self.nu))
        object.__setattr__(self, "mu", _items2(self.mu))

    # symbols -------------------------------------------------------------

    def f(self, x):
        x = np.asarray(x, dtype=float)
        if self.pi is None:
            return np.ones_like(x)
        out = np.zeros_like(x)
        for y, w in self.pi:
            # (1 - cos z) / z^2 = sinc(z / 2pi)^2 / 2
            out += w * y * y * 0.5 * np.sinc(x * y / TWO_PI) ** 2
        return out

    def g(self, x):
        x = np.asarray(x, dtype=float)
        if self.nu is None:
            return np.ones_like(x, dtype=complex)
        out = np.zeros(x.shape, dtype=complex)
        for y, w in self.nu:
            # (e^{iz} - 1) / (iz) = e^{iz/2} sinc(z / 2pi)
            out += w * y * np.exp(0.5j * x * y) * np.sinc(x * y / TWO_PI)
        return out

    def h(self, x1, x2):
        x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
        out = np.zeros(x1.shape, dtype=complex)
        for y, z, w in self.mu:
            out += w * np.exp(1j * (x1 * y + x2 * z))
        return out

    def hbar(self, x):
        return self.h(x, 0.0)

    def symbol_slopes(self) -> tuple[complex, complex]:
        """Derivatives g'(0) and hbar'(0), used for limits at the origin."""
        g1 = 0j if self.nu is None else 0.5j * sum(w * y * y for y, w in self.nu)
        h1 = 1j * sum(w * y for y, _, w in self.mu)
        return g1, h1

    # serialization -------------------------------------------------------

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_dict(self) -> dict:
        return {
            "pi": None if self.pi is None else [list(p) for p in self.pi],
            "nu": None if self.nu is None else [list(p) for p in self.nu],
            "mu": [list(p) for p in self.mu],
            "name": self.name,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scheme":
        unknown = set(d) - {"pi", "nu", "mu", "name"}
        if unknown:
            raise ValueError(f"unknown scheme keys: {sorted(unknown)}")
        return cls(
            pi=None if d["pi"] is None else [tuple(p) for p in d["pi"]],
            nu=None if d["nu"] is None else [tuple(p) for p in d["nu"]],
            mu=[tuple(p) for p in d["mu"]],
            name=d.get("name", "custom"),
        )

    @classmethod
    def from_json(cls, text: str) -> "Scheme":
        return cls.from_dict(json.loads(text))


@dataclass
class ValidationReport:
    scheme: str
    checks: dict = field(default_factory=dict)
    c_f: float = float("nan")

    @property
    def h_f(self) -> bool:
        return all(v for k, v in self.checks.items() if k.startswith("H_f"))

    @property
    def h_g(self) -> bool:
        return all(v for k, v in self.checks.items() if k.startswith("H_g"))

    @property
    def h_h(self) -> bool:
        return all(v for k, v in self.checks.items() if k.startswith("H_h"))

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def failures(self) -> list[str]:
        return [k for k, v in self.checks.items() if not v]

    def as_dict(self) -> dict:
        return {"scheme": self.scheme, "checks": dict(self.checks), "c_f": self.c_f,
                "ok": self.ok}


def validate(scheme: Scheme) -> ValidationReport:
    """Check the hypotheses on (pi, nu, mu); failures are reported, not raised."""
    rep = ValidationReport(scheme.name)
    c = rep.checks
    if scheme.pi is not None:
        w = dict(scheme.pi)
        c["H_f:symmetric"] = all(abs(w.get(-y, 0.0) - v) <= MOMENT_TOL for y, v in w.items())
        c["H_f:mass_zero"] = abs(sum(w.values())) <= MOMENT_TOL
        c["H_f:second_moment_2"] = abs(sum(y * y * v for y, v in w.items()) - 2) <= MOMENT_TOL
    xs = np.linspace(-np.pi, np.pi, F_GRID_POINTS)
    rep.c_f = float(np.min(scheme.f(xs)))
    c["H_f:f_positive"] = rep.c_f > POSITIVITY_TOL
    if scheme.nu is not None:
        nu = dict(scheme.nu)
        c["H_g:mass_zero"] = abs(sum(nu.values())) <= MOMENT_TOL
        c["H_g:first_moment_1"] = abs(sum(y * v for y, v in nu.items()) - 1) <= MOMENT_TOL
    mu = {(y, z): v for y, z, v in scheme.mu}
    c["H_h:nonnegative"] = all(v >= 0 for v in mu.values())
    c["H_h:mass_one"] = abs(sum(mu.values()) - 1) <= MOMENT_TOL
    c["H_h:symmetric"] = all(abs(mu.get((z, y), 0.0) - v) <= MOMENT_TOL
                             for (y, z), v in mu.items())
    return rep


def preset_standard() -> Scheme:
    """Nearest-neighbour Laplacian, backward difference, pointwise product."""
    return Scheme(pi={-1: 1.0, 0: -2.0, 1: 1.0}, nu={0: 1.0, -1: -1.0},
                  mu={(0, 0): 1.0}, name="standard")


def preset_sasamoto_spohn(kappa: float = 1.0, lam: float = 0.5) -> Scheme:
    if kappa < 0 or lam < 0 or kappa + lam <= 0:
        raise ValueError("need kappa, lambda >= 0 with kappa + lambda > 0")
    s = 2.0 * (kappa + lam)
    mu = {(0, 0): kappa / s, (1, 1): kappa / s, (0, 1): lam / s, (1, 0): lam / s}
    return Scheme(pi={-1: 1.0, 0: -2.0, 1: 1.0}, nu={0: 1.0, -1: -1.0}, mu=mu,
                  name=f"sasamoto_spohn(kappa={kappa:g},lambda={lam:g})")


def preset_spectral() -> Scheme:
    """Exact Laplacian and derivative on the band, pointwise product."""
    return Scheme(pi=None, nu=None, mu={(0, 0): 1.0}, name="spectral")


PRESETS = {
    "standard": preset_standard,
    "sasamoto_spohn": preset_sasamoto_spohn,
    "spectral": preset_spectral,
}


# Fourier-side operators --------------------------------------------------

def laplacian_symbol(scheme: Scheme, grid: GridSpec) -> np.ndarray:
    k = grid.modes
    return -(k * k) * scheme.f(grid.eps * k)


def derivative_symbol(scheme: Scheme, grid: GridSpec) -> np.ndarray:
    k = grid.modes
    return 1j * k * scheme.g(grid.eps * k)


def apply_laplacian(scheme: Scheme, u: SpectralField) -> SpectralField:
    return u.replace(laplacian_symbol(scheme, u.grid) * u.coeff)


def apply_derivative(scheme: Scheme, u: SpectralField) -> SpectralField:
    return u.replace(derivative_symbol(scheme, u.grid) * u.coeff)


def bilinear_reference(scheme: Scheme, u: SpectralField, v: SpectralField) -> SpectralField:
    """Folded convolution, O(N^2) per field.

    out(k) = (2pi)^-1 sum_l u(l) v(m) h(eps l, eps m),  m = fold(k - l).
    """
    grid = u.grid
    K, N = grid.K, grid.N
    l = grid.modes
    m = (grid.modes[:, None] - l[None, :] + K) % N - K      # (k, l)
    weights = scheme.h(grid.eps * l[None, :], grid.eps * m)  # (k, l)
    vm = v.coeff[..., m + K]                                 # (..., k, l)
    out = np.einsum("kl,...l,...kl->...k", weights, u.coeff, vm) / TWO_PI
    return SpectralField(grid, out, u.real_flag and v.real_flag)


def bilinear_stencil(scheme: Scheme, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """B_N on site values (last axis = sites)."""
    out = np.zeros(np.broadcast_shapes(u.shape, v.shape),
                   dtype=np.result_type(u, v, float))
    for y, z, w in scheme.mu:
        out += w * np.roll(u, -y, axis=-1) * np.roll(v, -z, axis=-1)
    return out


def apply_bilinear(scheme: Scheme, u: SpectralField, v: SpectralField,
                   method: str = "fast") -> SpectralField:
    """Fourier coefficients of B_N(u, v).

    ``method="reference"`` evaluates the folded convolution directly;
    ``"fast"`` applies the stencil on lattice values, which is the same
    operator since the lattice transform is exact.
    """
    if u.grid != v.grid:
        raise ValueError("fields live on different grids")
    if method == "reference":
        return bilinear_reference(scheme, u, v)
    if method != "fast":
        raise ValueError(f"unknown method {method!r}")
    uu, vv = dft_inverse(u).values, dft_inverse(v).values
    out = dft_forward(LatticeField(u.grid, bilinear_stencil(scheme, uu, vv)))
    return out


def stencil_laplacian(scheme: Scheme, values: np.ndarray, eps: float) -> np.ndarray:
    if scheme.pi is None:
        raise ValueError("scheme has no finite Laplacian stencil")
    return sum(w * np.roll(values, -y, axis=-1) for y, w in scheme.pi) / eps**2


def stencil_derivative(scheme: Scheme, values: np.ndarray, eps: float) -> np.ndarray:
    if scheme.nu is None:
        raise ValueError("scheme has no finite derivative stencil")
    return sum(w * np.roll(values, -y, axis=-1) for y, w in scheme.nu) / eps


def lattice_inner(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """<u, v>_{T_N} = eps * sum_x u(x) v(x) over the last axis."""
    return TWO_PI / u.shape[-1] * np.sum(u * v, axis=-1)
