"""Deterministic constants and kernel integrals.

Integrands are always coded in subtracted or symmetrized form; removable
singularities are replaced by their analytic limit inside a small radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import TWO_PI, GridSpec
from .noise import Mollifier, get_mollifier
from .operators import Scheme, validate

SINGULAR_RADIUS = 1e-6


class QuadratureError(RuntimeError):
    def __init__(self, message: str, estimate: float):
        super().__init__(f"{message} (current estimate {estimate!r})")
        self.estimate = estimate


@dataclass(frozen=True)
class QuadratureSpec:
    rule: str = "adaptive-composite-simpson"
    abs_tol: float = 1e-12
    max_subdivisions: int = 200_000

    def __post_init__(self):
        if self.rule != "adaptive-composite-simpson":
            raise ValueError(f"unsupported rule {self.rule!r}")
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be positive")

    def refined(self, factor: float = 10.0) -> "QuadratureSpec":
        return QuadratureSpec(self.rule, self.abs_tol / factor, self.max_subdivisions)


def _simpson_panels(f, a, b, owner, n_owner, tol_density, max_subdivisions):
    """Adaptive Simpson on independent panels; panel i contributes to owner[i].

    ``f(x, owner)`` is evaluated on arrays.  A panel is accepted once its
    Richardson error estimate is below ``tol_density[owner] * width`` (or at
    the rounding floor of its value); accepted values carry the Richardson
    correction.
    """
    out = np.zeros(n_owner)
    m = 0.5 * (a + b)
    fa, fm, fb = f(a, owner), f(m, owner), f(b, owner)
    coarse = (b - a) / 6.0 * (fa + 4 * fm + fb)
    used = a.size
    while a.size:
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm, owner), f(rm, owner)
        left = (m - a) / 6.0 * (fa + 4 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4 * frm + fb)
        fine = left + right
        err = np.abs(fine - coarse) / 15.0
        floor = 64 * np.finfo(float).eps * (np.abs(left) + np.abs(right))
        ok = err <= np.maximum(tol_density[owner] * (b - a), floor)
        np.add.at(out, owner[ok], fine[ok] + (fine[ok] - coarse[ok]) / 15.0)
        keep = ~ok
        if not keep.any():
            break
        used += int(keep.sum())
        if used > max_subdivisions:
            np.add.at(out, owner[keep], fine[keep])
            raise QuadratureError("subdivision limit reached", out if n_owner > 1 else float(out[0]))
        a, m, b, owner = a[keep], m[keep], b[keep], owner[keep]
        fa, fm, fb, flm, frm = fa[keep], fm[keep], fb[keep], flm[keep], frm[keep]
        # split every unresolved panel into its two halves
        a, m, b = np.concatenate([a, m]), np.concatenate([lm[keep], rm[keep]]), np.concatenate([m, b])
        fa, fm, fb = np.concatenate([fa, fm]), np.concatenate([flm, frm]), np.concatenate([fm, fb])
        coarse = np.concatenate([left[keep], right[keep]])
        owner = np.concatenate([owner, owner])
    return out


def adaptive_simpson(f, breakpoints, tol: float, max_subdivisions: int = 200_000) -> float:
    """Breadth-first adaptive Simpson of a vectorized ``f`` over consecutive breakpoints.

    The tolerance is shared among panels in proportion to their width.
    """
    pts = np.unique(np.asarray(breakpoints, dtype=float))
    if pts.size < 2:
        return 0.0
    owner = np.zeros(pts.size - 1, dtype=np.int64)
    density = np.array([tol / (pts[-1] - pts[0])])
    out = _simpson_panels(lambda x, _o: f(x), pts[:-1], pts[1:], owner, 1, density,
                          max_subdivisions)
    return float(out[0])


def adaptive_simpson_batch(f, breakpoints: np.ndarray, tol: float,
                           max_subdivisions: int = 2_000_000) -> np.ndarray:
    """Many one-dimensional integrals at once.

    ``breakpoints`` has shape (n_integrals, n_points) with sorted rows; ``f(x, i)``
    evaluates integrand ``i`` at ``x``.  Each integral gets tolerance ``tol``.
    """
    bp = np.sort(np.asarray(breakpoints, dtype=float), axis=1)
    n, p = bp.shape
    a, b = bp[:, :-1].ravel(), bp[:, 1:].ravel()
    owner = np.repeat(np.arange(n), p - 1)
    width = bp[:, -1] - bp[:, 0]
    density = np.where(width > 0, tol / np.where(width > 0, width, 1.0), np.inf)
    return _simpson_panels(f, a, b, owner, n, density, max_subdivisions)


# correction constant ------------------------------------------------------

def correction_integrand(scheme: Scheme, x) -> np.ndarray:
    """Im(g hbar)(x)/x * Re h(x,-x) |g|^2 / f^2, with the limit at x = 0."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < SINGULAR_RADIUS
    xs = np.where(small, 1.0, x)
    g = scheme.g(xs)
    first = np.imag(g * scheme.hbar(xs)) / xs
    g1, h1 = scheme.symbol_slopes()
    first = np.where(small, np.imag(g1 + h1), first)
    second = np.real(scheme.h(xs, -xs)) * np.abs(g) ** 2 / scheme.f(xs) ** 2
    second = np.where(small, 1.0, second)
    return first * second


def correction_constant(scheme: Scheme, quad: QuadratureSpec | None = None) -> float:
    """c = -(4 pi)^-1 int_0^pi Im(g hbar)/x * h(x,-x) |g|^2 / f^2 dx."""
    quad = QuadratureSpec() if quad is None else quad
    rep = validate(scheme)
    if not rep.ok:
        raise ValueError(f"scheme {scheme.name!r} fails validation: {rep.failures()}")
    val = adaptive_simpson(lambda x: correction_integrand(scheme, x), [0.0, np.pi],
                           quad.abs_tol, quad.max_subdivisions)
    return -val / (2 * TWO_PI)


# renormalization constant -------------------------------------------------

@dataclass
class RenormConstant:
    continuum: float
    lattice_sum: float
    N: int
    eps_reg: float

    @property
    def relative_gap(self) -> float:
        return abs(self.lattice_sum - self.continuum) / abs(self.continuum)


def renormalization_constant(mollifier="indicator", eps_reg: float | None = None,
                             N: int | None = None,
                             quad: QuadratureSpec | None = None) -> RenormConstant:
    """continuum = (4 pi eps_reg)^-1 int phi^2; lattice = (4 pi)^-1 sum_{|k|<N/2} phi(eps_reg k)^2.

    Either ``N`` (then ``eps_reg = 2 pi / N`` unless given) or ``eps_reg``
    (then N is the odd lattice size nearest to ``2 pi / eps_reg``) is needed.
    """
    quad = QuadratureSpec() if quad is None else quad
    m = get_mollifier(mollifier)
    if N is None:
        if eps_reg is None:
            raise ValueError("need N or eps_reg")
        N = 2 * int(round((TWO_PI / eps_reg - 1) / 2)) + 1
    grid = GridSpec(N)
    if eps_reg is None:
        eps_reg = grid.eps
    r = m.radius
    sq = adaptive_simpson(lambda x: m(x) ** 2, [-r, 0.0, r], quad.abs_tol,
                          quad.max_subdivisions)
    continuum = sq / (2 * TWO_PI * eps_reg)
    lattice = float(np.sum(m(eps_reg * grid.modes) ** 2)) / (2 * TWO_PI)
    return RenormConstant(continuum, lattice, N, float(eps_reg))


# vertex function ------------------------------------------------------------

@dataclass(frozen=True)
class KernelParams:
    scheme: Scheme | None = None
    K_trunc: int = 256
    T_trunc: float = 40.0

    def __post_init__(self):
        if self.K_trunc < 64:
            raise ValueError("K_trunc must be at least 64")
        if not self.T_trunc > 0:
            raise ValueError("T_trunc must be positive")


def _vertex_direct(sigma: np.ndarray, k: int, K: int) -> np.ndarray:
    k2 = np.concatenate([np.arange(-K, 0), np.arange(1, K + 1)]).astype(float)
    s = sigma[:, None]
    a = (k + k2) ** 2 + k2 ** 2
    return np.sum((k + k2) * np.exp(-s * a) - k2 * np.exp(-2 * s * k2 ** 2), axis=1)


def _vertex_dual(sigma: np.ndarray, k: int, n_terms: int = 12) -> np.ndarray:
    # Poisson summation of the full k2-sum, accurate for small sigma
    s = np.maximum(sigma, 1e-300)
    mvals = np.arange(1, n_terms + 1)
    theta = 1 + 2 * np.sum(np.exp(-np.pi ** 2 * mvals ** 2 / (2 * s[:, None]))
                           * np.cos(np.pi * mvals * k), axis=1)
    return (0.5 * k * np.exp(-s * k * k / 2) * np.sqrt(np.pi / (2 * s)) * theta
            - k * np.exp(-s * k * k))


def vertex_function(sigma, k: int, K_trunc: int = 256) -> np.ndarray:
    """V(sigma, k) = sum_{k2 != 0} [(k+k2) e^{-sigma((k+k2)^2 + k2^2)} - k2 e^{-2 sigma k2^2}].

    This is the subtracted kernel [H(k+k2) - H(k2)] e^{-sigma k2^2} with the
    factor i removed.  The k2-sum runs over |k2| <= K_trunc where its tail is
    below e^-40; for smaller sigma the Poisson-dual form of the full sum is
    used, which the truncated sum approximates anyway.
    """
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    k = int(k)
    if k == 0:
        return np.zeros_like(sigma)
    direct = 2 * sigma * (K_trunc - abs(k)) ** 2 >= 40.0
    out = np.empty_like(sigma)
    if direct.any():
        out[direct] = _vertex_direct(sigma[direct], k, K_trunc)
    if (~direct).any():
        out[~direct] = _vertex_dual(sigma[~direct], k)
    return out


@dataclass
class VertexResult:
    k: int
    value: float
    tail_estimate: float


def vertex_V5_l1(k: int, params: KernelParams | None = None,
                 quad: QuadratureSpec | None = None) -> VertexResult:
    """int_0^T |V(sigma, k)| d sigma, integrated in u = sqrt(sigma)."""
    params = KernelParams() if params is None else params
    quad = QuadratureSpec(abs_tol=1e-10) if quad is None else quad
    k = int(k)
    if k == 0:
        return VertexResult(0, 0.0, 0.0)
    K = params.K_trunc

    def integrand(u):
        return 2 * u * np.abs(vertex_function(u * u, k, K))

    umax = math.sqrt(params.T_trunc)
    # the integrand lives on the scale u ~ 1/|k| near the origin
    bps = np.concatenate([[0.0], np.geomspace(0.05 / abs(k), umax, 32)])
    val = adaptive_simpson(integrand, bps, quad.abs_tol, quad.max_subdivisions)
    # |V| decays at least like e^{-sigma} beyond the truncation time
    tail = float(abs(vertex_function(params.T_trunc, k, K)[0]))
    if tail > quad.abs_tol:
        raise QuadratureError("time truncation tail above tolerance", val)
    return VertexResult(k, val, tail)


def vertex_l1_closed_form(k: int) -> float:
    """int_0^inf V(sigma, k) d sigma summed in closed form (V >= 0 for k > 0)."""
    k = abs(int(k))
    if k == 0:
        return 0.0
    # (pi/2) sinh(pi k) / (cosh(pi k) - (-1)^k), written without overflow
    q = math.exp(-math.pi * k)
    sign = -1.0 if k % 2 else 1.0
    ratio = (1 - q * q) / (1 + q * q - 2 * sign * q)
    return 0.5 * math.pi * ratio - 1.0 / k


# zero chaos ----------------------------------------------------------------

def discrete_zero_chaos(scheme: Scheme, N: int, t: float) -> float:
    """(2 pi)^-1 (-eps) sum_{0<k<N/2} Im(g hbar)(x)/x * h(x,-x)|g|^2/(2 f^2) * (1 - e^{-2k^2 f t})."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    grid = GridSpec(N)
    k = np.arange(1, grid.K + 1, dtype=float)
    x = grid.eps * k
    term = 0.5 * correction_integrand(scheme, x) * -np.expm1(-2 * k * k * scheme.f(x) * t)
    return float(-grid.eps * np.sum(term) / TWO_PI)


# KPZ cancellation -------------------------------------------------------------

def _cancellation_sums(K: int):
    r = np.arange(-K, K + 1, dtype=float)
    k1, k2 = np.meshgrid(r, r, indexing="ij")
    k12 = k1 + k2
    ok = k12 != 0
    k1, k2, k12 = k1[ok], k2[ok], k12[ok]
    denom = k1 ** 2 + k2 ** 2 + k12 ** 2
    sum_a = np.sum(2.0 / denom)
    sum_b = np.sum(-4.0 * k2 / (k12 * denom))
    return float(sum_a), float(sum_b)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)
# below this |a - b| the divided difference of a smooth phi^2 is averaged from its derivative
_DD_SWITCH = 1e-2


def _phi2_quotient(m: Mollifier, a, b, diff):
    """(phi^2(a) - phi^2(b)) / diff with diff = a - b, stable as diff -> 0.

    For a piecewise constant phi the difference of squares is exact, so the
    quotient is taken directly; only diff = 0 itself is replaced (by 0, the
    derivative almost everywhere).  A finite substitution radius would be
    wrong here: next to a jump the quotient behaves like 1/diff.
    Otherwise, for small |diff|, the quotient is the mean of (phi^2)' over
    [b, a] by Gauss-Legendre, so no cancellation is incurred.
    """
    if m.dphi is None:
        small = diff == 0
        safe = np.where(small, 1.0, diff)
        return np.where(small, 0.0, (m(a) ** 2 - m(b) ** 2) / safe)
    small = np.abs(diff) < _DD_SWITCH
    safe = np.where(small, 1.0, diff)
    direct = (m(a) ** 2 - m(b) ** 2) / safe
    t = 0.5 * (_GL_NODES + 1.0)
    x = b[..., None] + t * diff[..., None]
    mean = 0.5 * np.sum(_GL_WEIGHTS * 2 * m(x) * m.derivative(x), axis=-1)
    return np.where(small, mean, direct)


def cancellation_integrand(m: Mollifier, k1, k2) -> np.ndarray:
    """Final integrand of the regularized limit (without the factor -2).

    [phi^2(k1)(phi^2(k12) - phi^2(k2)) + phi^2(k12)(k2 - k1)(phi^2(k1) - phi^2(k2)) / (2 k12)]
    / (k1^2 + k2^2 + k12^2); the quotient on the line k12 = 0 is removable
    because phi is even: phi^2(k2) = phi^2(k1 - k12) there.
    """
    k1, k2 = np.broadcast_arrays(np.asarray(k1, float), np.asarray(k2, float))
    k12 = k1 + k2
    p1, p2, p12 = m(k1) ** 2, m(k2) ** 2, m(k12) ** 2
    denom = k1 ** 2 + k2 ** 2 + k12 ** 2
    second = 0.5 * p12 * (k2 - k1) * _phi2_quotient(m, k1, -k2, k12)
    num = p1 * (p12 - p2) + second
    return np.where(denom > 0, num / np.where(denom > 0, denom, 1.0), 0.0)


def _regularized_limit(m: Mollifier, quad: QuadratureSpec) -> float:
    R = m.radius
    tol = quad.abs_tol

    def inner(k1):
        # k2-integrals for all outer nodes at once, split where phi^2(k2),
        # phi^2(k1 + k2) jump and at k1 + k2 = 0
        k1 = np.atleast_1d(k1)
        c = np.full_like(k1, 1.0)
        cand = np.stack([-2 * R * c, -R * c, R * c, 2 * R * c, -k1, -R - k1, R - k1], axis=1)
        bps = np.clip(cand, -2 * R, 2 * R)
        return adaptive_simpson_batch(
            lambda k2, i: cancellation_integrand(m, k1[i], k2), bps, tol / (4 * R),
            quad.max_subdivisions * max(1, k1.size))

    edges = [-2 * R, -R, 0.0, R, 2 * R]
    if m.dphi is not None:
        return -2.0 * adaptive_simpson(inner, edges, tol, quad.max_subdivisions)

    # For a discontinuous phi the k2-integral diverges logarithmically as
    # k1 -> +-R.  Each outer segment is mapped by a smoothstep whose Jacobian
    # vanishes at the ends, so those points never need evaluating.
    lo, width = np.array(edges[:-1]), np.diff(edges)

    def outer(t):
        t = np.atleast_1d(t)
        seg = np.minimum(t.astype(int), lo.size - 1)
        u = t - seg
        jac = width[seg] * 6 * u * (1 - u)
        vals = np.zeros_like(t)
        live = jac > 0
        k1 = lo[seg] + width[seg] * u * u * (3 - 2 * u)
        vals[live] = inner(k1[live]) * jac[live]
        return vals

    return -2.0 * adaptive_simpson(outer, np.arange(lo.size + 1.0), tol, quad.max_subdivisions)


@dataclass
class CancellationResult:
    symmetric_zero: float
    scale: float
    regularized_limit: float
    refined_limit: float

    @property
    def relative_change(self) -> float:
        if self.refined_limit == 0:
            return abs(self.regularized_limit)
        return abs(self.regularized_limit - self.refined_limit) / abs(self.refined_limit)

    def as_dict(self) -> dict:
        return {"symmetric_zero": self.symmetric_zero, "scale": self.scale,
                "regularized_limit": self.regularized_limit,
                "refined_limit": self.refined_limit,
                "relative_change": self.relative_change}


def kpz_cancellation(mollifier="indicator", quad: QuadratureSpec | None = None,
                     K_trunc: int = 64) -> CancellationResult:
    """Symmetrized truncated sum (identically zero) and the regularized limit per unit t.

    The limit is computed at ``quad.abs_tol`` and at a tenfold tighter
    tolerance so stability can be judged.
    """
    quad = QuadratureSpec(abs_tol=1e-7) if quad is None else quad
    m = get_mollifier(mollifier)
    sum_a, sum_b = _cancellation_sums(K_trunc)
    coarse = _regularized_limit(m, quad)
    fine = _regularized_limit(m, quad.refined())
    return CancellationResult(sum_a + sum_b, abs(sum_a), coarse, fine)
