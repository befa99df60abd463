"""Time stepping for the lattice Burgers, KPZ and stochastic heat equations.

Burgers and KPZ use exponential Euler: the linear part ``-k^2 f(eps k)`` is
integrated exactly per mode, the nonlinearity is explicit and the additive
noise enters through its exact per-mode stochastic convolution.  The heat
equation uses Ito Euler-Maruyama for the multiplicative term followed by the
exact heat semigroup.

States are centered coefficient arrays; leading axes index replicas, so one
call advances a whole ensemble.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .grid import TWO_PI, GridSpec, LatticeField, SpectralField, dft_forward, extend
from .noise import (
    EnsembleNoise,
    NoiseStream,
    get_mollifier,
    mollifier_weights,
    white_coeffs,
)
from .operators import Scheme, derivative_symbol, laplacian_symbol, preset_spectral

EQUATIONS = ("burgers", "kpz", "she")


class ConfigError(ValueError):
    """Rejected simulation parameters."""


def phi1(z):
    """(1 - e^{-z}) / z with the value 1 at z = 0."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-8
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 - 0.5 * z, -np.expm1(-safe) / safe)


def default_blowup_threshold(grid: GridSpec) -> float:
    return 1e6 / math.sqrt(grid.eps)


@dataclass(frozen=True)
class SimConfig:
    grid: GridSpec
    scheme: Scheme
    dt: float
    t_end: float
    equation: str = "burgers"
    renorm_constant: float = 0.0
    blowup_threshold: float | None = None
    mollifier: object = None
    eps_reg: float | None = None
    seed: int = 0
    stream_id: int = 0
    noise_scale: float = 1.0
    nonlinear: bool = True
    # deterministic forcing theta(t, x), vectorized in x
    forcing: Callable | None = None
    # record every `snapshot_stride` steps; 0 keeps only the first and last state
    snapshot_stride: int = 0

    def __post_init__(self):
        if self.equation not in EQUATIONS:
            raise ConfigError(f"equation must be one of {EQUATIONS}, got {self.equation!r}")
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.t_end < 0:
            raise ConfigError(f"t_end must be nonnegative, got {self.t_end}")
        if self.nonlinear and self.dt > self.grid.eps ** 2 * (1 + 1e-12):
            raise ConfigError(
                f"dt = {self.dt:g} exceeds the stability guard eps^2 = {self.grid.eps ** 2:g}"
            )
        n = round(self.t_end / self.dt)
        if abs(n * self.dt - self.t_end) > 1e-9 * max(self.t_end, self.dt):
            raise ConfigError("t_end must be an integer multiple of dt")
        if self.blowup_threshold is not None and not self.blowup_threshold > 0:
            raise ConfigError("blowup_threshold must be positive")
        if self.mollifier is not None:
            try:
                get_mollifier(self.mollifier)
            except ValueError as e:
                raise ConfigError(str(e)) from None
            if self.eps_reg is None or not self.eps_reg > 0:
                raise ConfigError("a mollifier needs a positive eps_reg")
        if self.snapshot_stride < 0:
            raise ConfigError("snapshot_stride must be nonnegative")

    @property
    def n_steps(self) -> int:
        return round(self.t_end / self.dt)

    @property
    def threshold(self) -> float:
        if self.blowup_threshold is None:
            return default_blowup_threshold(self.grid)
        return self.blowup_threshold


# real-field transforms on centered coefficient arrays (last axis)

def to_sites(c: np.ndarray, grid: GridSpec) -> np.ndarray:
    return np.fft.irfft(np.fft.ifftshift(c, axes=-1)[..., : grid.K + 1], n=grid.N) / grid.eps


def to_coeff(v: np.ndarray, grid: GridSpec) -> np.ndarray:
    pos = grid.eps * np.fft.rfft(v, axis=-1)
    return np.concatenate([np.conj(pos[..., :0:-1]), pos], axis=-1)


class Propagator:
    """Precomputed per-mode factors for one configuration."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        grid, scheme = cfg.grid, cfg.scheme
        self.grid = grid
        self.lap = laplacian_symbol(scheme, grid)
        self.dsym = derivative_symbol(scheme, grid)
        z = -self.lap * cfg.dt
        self.decay = np.exp(-z)
        self.phi1dt = phi1(z) * cfg.dt
        if cfg.mollifier is None:
            self.moll = np.ones(grid.N)
        else:
            self.moll = mollifier_weights(cfg.mollifier, grid, cfg.eps_reg)
        # exact stochastic convolution: variance (1 - e^{-2z}) / (2z) relative to dt
        self.noise_mult = cfg.noise_scale * np.sqrt(phi1(2 * z)) * self.moll
        self.mode0 = np.zeros(grid.N)
        self.mode0[grid.K] = 1.0

    def bilinear(self, a_sites: np.ndarray, b_sites: np.ndarray) -> np.ndarray:
        out = 0.0
        for y, z, w in self.cfg.scheme.mu:
            out = out + w * np.roll(a_sites, -y, axis=-1) * np.roll(b_sites, -z, axis=-1)
        return to_coeff(out, self.grid)

    def forcing_sites(self, t: float) -> np.ndarray:
        vals = np.asarray(self.cfg.forcing(t, self.grid.sites), dtype=float)
        return np.broadcast_to(vals, (self.grid.N,))

    def forcing_coeff(self, t: float):
        if self.cfg.forcing is None:
            return 0.0
        return to_coeff(self.forcing_sites(t), self.grid)

    def step(self, c: np.ndarray, t: float, dW: np.ndarray | None) -> np.ndarray:
        cfg = self.cfg
        if cfg.equation == "burgers":
            drift = self.forcing_coeff(t)
            if cfg.nonlinear:
                u = to_sites(c, self.grid)
                drift = drift + self.bilinear(u, u)
            out = self.decay * c + self.phi1dt * self.dsym * drift
            if dW is not None:
                out = out + self.dsym * self.noise_mult * dW
            return out
        if cfg.equation == "kpz":
            drift = self.forcing_coeff(t) - TWO_PI * cfg.renorm_constant * self.mode0
            if cfg.nonlinear:
                du = to_sites(self.dsym * c, self.grid)
                drift = drift + self.bilinear(du, du)
            out = self.decay * c + self.phi1dt * drift
            if dW is not None:
                out = out + self.noise_mult * dW
            return out
        # she
        w = to_sites(c, self.grid)
        incr = 0.0
        if dW is not None:
            incr = to_sites(cfg.noise_scale * self.moll * dW, self.grid)
        if cfg.forcing is not None:
            incr = incr + cfg.dt * self.forcing_sites(t)
        return np.exp(self.lap * cfg.dt) * to_coeff(w + w * incr, self.grid)


@lru_cache(maxsize=32)
def propagator(cfg: SimConfig) -> Propagator:
    return Propagator(cfg)


def _step(equation: str, state: SpectralField, cfg: SimConfig, increment, t: float):
    if cfg.equation != equation:
        cfg = replace(cfg, equation=equation)
    dW = None
    if increment is not None and cfg.noise_scale != 0:
        dW = increment.coeff if isinstance(increment, SpectralField) else np.asarray(increment)
    out = propagator(cfg).step(state.coeff, t, dW)
    return SpectralField(state.grid, out, real_flag=True)


def step_burgers(state: SpectralField, cfg: SimConfig, increment=None, t: float = 0.0):
    """One exponential-Euler step; ``increment`` is the white-noise dW (or None)."""
    return _step("burgers", state, cfg, increment, t)


def step_kpz(state: SpectralField, cfg: SimConfig, increment=None, t: float = 0.0):
    return _step("kpz", state, cfg, increment, t)


def step_she(state: SpectralField, cfg: SimConfig, increment=None, t: float = 0.0):
    return _step("she", state, cfg, increment, t)


# noise sources ------------------------------------------------------------

class SubstepNoise:
    """Coarse-step normals built from ``ratio`` consecutive fine steps.

    ``white_coeffs(z, ratio * dt)`` of the result equals the sum of the fine
    increments, so runs at different dt see the same Brownian path.
    """

    def __init__(self, source, ratio: int):
        self.source = source
        self.ratio = int(ratio)

    def normals_at(self, step: int, n: int) -> np.ndarray:
        r = self.ratio
        acc = sum(self.source.normals_at(step * r + i, n) for i in range(r))
        return acc / math.sqrt(r)


def make_noise(cfg: SimConfig, batch_shape: tuple, noise=None):
    """Normalize the ``noise`` argument of :func:`run` to a normals source."""
    if cfg.noise_scale == 0:
        return None
    if noise is None:
        if batch_shape:
            R = int(np.prod(batch_shape))
            return EnsembleNoise([NoiseStream(cfg.seed, cfg.stream_id + r) for r in range(R)])
        return NoiseStream(cfg.seed, cfg.stream_id)
    if isinstance(noise, (list, tuple)):
        return EnsembleNoise(noise)
    return noise


# trajectories -------------------------------------------------------------

@dataclass
class Trajectory:
    grid: GridSpec
    times: np.ndarray
    states: np.ndarray          # (n_snap, ..., N) centered coefficients
    blown_up_at: float | None = None
    flags: dict = field(default_factory=dict)

    def state(self, i: int) -> SpectralField:
        return SpectralField(self.grid, self.states[i], real_flag=True)

    @property
    def final(self) -> SpectralField:
        return self.state(-1)

    def site_values(self) -> np.ndarray:
        return to_sites(self.states, self.grid)

    def write_jsonl(self, path) -> None:
        vals = self.site_values()
        with open(path, "w") as fh:
            for t, v in zip(self.times, vals):
                fh.write(json.dumps({"t": float(t), "field": v.tolist()}) + "\n")

    def summary_rows(self) -> list[dict]:
        vals = self.site_values()
        rows = []
        for t, v, c in zip(self.times, vals, self.states):
            rows.append({
                "t": float(t),
                "l2_norm": float(np.sqrt(self.grid.eps * np.sum(v * v))),
                "linf_norm": float(np.max(np.abs(v))),
                "mode0": float(np.real(c[..., self.grid.K]).mean()),
            })
        return rows

    def write_summary_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["t", "l2_norm", "linf_norm", "mode0"])
            w.writeheader()
            for r in self.summary_rows():
                w.writerow({k: repr(v) for k, v in r.items()})


def _initial_coeff(cfg: SimConfig, init) -> np.ndarray:
    if init is None:
        c = np.zeros(cfg.grid.N, dtype=complex)
        if cfg.equation == "she":
            c[cfg.grid.K] = TWO_PI
        return c
    if isinstance(init, LatticeField):
        init = dft_forward(init)
    if init.grid != cfg.grid:
        raise ConfigError("initial state lives on a different grid")
    return np.array(init.coeff, dtype=complex)


def run(cfg: SimConfig, init=None, noise=None) -> Trajectory:
    """Integrate to ``t_end`` or until the sup norm crosses the blow-up threshold.

    ``init`` may carry leading replica axes; ``noise`` is a NoiseStream, a
    list of them (one per replica) or any object with ``normals_at(step, n)``.
    """
    prop = propagator(cfg)
    grid = cfg.grid
    c = _initial_coeff(cfg, init)
    src = make_noise(cfg, c.shape[:-1], noise)
    w0_sites = to_sites(c, grid)
    positive_start = cfg.equation == "she" and bool(np.all(w0_sites > 0))
    negative_seen = False
    times, states = [0.0], [c.copy()]
    blown = None
    stride = cfg.snapshot_stride
    for n in range(cfg.n_steps):
        t = n * cfg.dt
        dW = None
        if src is not None:
            dW = white_coeffs(src.normals_at(n, grid.N), grid, cfg.dt)
        c = prop.step(c, t, dW)
        v = to_sites(c, grid)
        if not np.all(np.isfinite(v)) or np.max(np.abs(v)) >= cfg.threshold:
            blown = (n + 1) * cfg.dt
            break
        if positive_start and not negative_seen and np.min(v) < 0:
            negative_seen = True
        last = n + 1 == cfg.n_steps
        if last or (stride and (n + 1) % stride == 0):
            times.append((n + 1) * cfg.dt)
            states.append(c.copy())
    flags = {}
    if positive_start:
        flags["negativity"] = negative_seen
    return Trajectory(grid, np.array(times), np.array(states), blown, flags)


# Cole-Hopf consistency ----------------------------------------------------

@dataclass
class ColeHopfReport:
    dts: list
    sup_errors: list
    dt_order: float
    c_N: float
    n_replicas: int

    @property
    def sup_error(self) -> float:
        return self.sup_errors[-1]

    def as_dict(self) -> dict:
        return {"dts": list(self.dts), "sup_errors": list(self.sup_errors),
                "dt_order": self.dt_order, "c_N": self.c_N, "n_replicas": self.n_replicas}


def lattice_renorm_constant(grid: GridSpec, mollifier, eps_reg: float | None) -> float:
    """c_N = (4 pi)^-1 sum_k phi(eps_reg k)^2: half the per-unit-time variance of dB(x)."""
    m = np.ones(grid.N) if mollifier is None else mollifier_weights(mollifier, grid, eps_reg)
    return float(np.sum(m * m) / (2 * TWO_PI))


def _default_h0(x):
    return 0.1 * np.cos(x) + 0.03 * np.sin(2 * x)


def fit_order(dts, errors) -> float:
    slope, _ = np.polyfit(np.log(np.asarray(dts)), np.log(np.asarray(errors)), 1)
    return float(slope)


def cole_hopf_check(N: int = 63, eps_reg: float = 0.25, T: float = 0.1,
                    dts: Sequence[float] = (4e-5, 2e-5, 1e-5), n_replicas: int = 8,
                    seed: int = 0, mollifier="indicator", noise_scale: float = 1.0,
                    h0: Callable = _default_h0, scheme: Scheme | None = None) -> ColeHopfReport:
    """Compare exp(h) from KPZ with w from the heat equation on shared noise.

    Both equations use the spectral scheme, for which the Cole-Hopf identity
    holds up to time discretization (finite-difference operators leave an
    O(eps) spatial defect).  Every dt is an integer fraction of the largest one
    and coarse noise increments are sums of the finest ones.
    """
    grid = GridSpec(N)
    scheme = preset_spectral() if scheme is None else scheme
    dts = sorted(dts, reverse=True)
    dt_fine = dts[-1]
    ratios = [round(d / dt_fine) for d in dts]
    if any(abs(r * dt_fine - d) > 1e-12 * d for r, d in zip(ratios, dts)):
        raise ConfigError("every dt must be an integer multiple of the smallest one")
    c_N = lattice_renorm_constant(grid, mollifier, eps_reg) if noise_scale else 0.0
    h_init = np.broadcast_to(h0(grid.sites), (n_replicas, N))
    base = EnsembleNoise([NoiseStream(seed, r) for r in range(n_replicas)])
    errors = []
    for d, r in zip(dts, ratios):
        common = dict(grid=grid, scheme=scheme, dt=d, t_end=T, mollifier=mollifier,
                      eps_reg=eps_reg, noise_scale=noise_scale)
        kpz = propagator(SimConfig(equation="kpz", renorm_constant=c_N, **common))
        she = propagator(SimConfig(equation="she", **common))
        src = SubstepNoise(base, r)
        h = to_coeff(h_init, grid)
        w = to_coeff(np.exp(h_init), grid)
        sup = np.zeros(n_replicas)
        for n in range(round(T / d)):
            dW = white_coeffs(src.normals_at(n, N), grid, d) if noise_scale else None
            h = kpz.step(h, n * d, dW)
            w = she.step(w, n * d, dW)
            err = np.max(np.abs(np.exp(to_sites(h, grid)) - to_sites(w, grid)), axis=-1)
            sup = np.maximum(sup, err)
        errors.append(float(np.mean(sup)))
    order = fit_order(dts, errors) if len(dts) > 1 else float("nan")
    return ColeHopfReport(list(dts), errors, order, c_N, n_replicas)


# Feynman-Kac --------------------------------------------------------------

@dataclass
class FKEstimate:
    mean: float
    std_err: float
    exponent_mean: float
    exponent_std_err: float
    n_paths: int


def _fk_exponents(theta, h_bar, T, x, n_paths, stream, n_steps):
    if n_paths < 100:
        raise ValueError(f"n_paths must be at least 100, got {n_paths}")
    if T <= 0 or n_steps < 1:
        raise ValueError("need T > 0 and n_steps >= 1")
    ds = T / n_steps
    z = stream.bulk((n_paths, n_steps))
    # Brownian paths with d<B> = 2 dt
    B = np.concatenate([np.zeros((n_paths, 1)), np.cumsum(np.sqrt(2 * ds) * z, axis=1)], axis=1)
    s = np.linspace(0.0, T, n_steps + 1)
    vals = np.asarray(theta(T - s, x + B), dtype=float) * np.ones_like(B)
    integral = ds * (vals.sum(axis=1) - 0.5 * (vals[:, 0] + vals[:, -1]))
    return np.asarray(h_bar(x + B[:, -1]), dtype=float) + integral


def _fk_summary(expo: np.ndarray) -> FKEstimate:
    n = expo.size
    top = np.max(expo)
    e = np.exp(expo - top)
    m = e.mean()
    se = e.std(ddof=1) / math.sqrt(n) / m
    return FKEstimate(float(top + np.log(m)), float(se), float(expo.mean()),
                      float(expo.std(ddof=1) / math.sqrt(n)), n)


def feynman_kac_mc(theta: Callable, h_bar: Callable, T: float, x: float, n_paths: int,
                   stream: NoiseStream, n_steps: int = 100) -> FKEstimate:
    """log E exp(h_bar(x + B_T) + int_0^T theta(T - s, x + B_s) ds), d<B> = 2 dt.

    This is h(T, x) for dh = (Delta h + (Dh)^2 + theta) dt with h(0) = h_bar.
    The standard error is the delta-method error of the log.
    """
    return _fk_summary(_fk_exponents(theta, h_bar, T, x, n_paths, stream, n_steps))


def variational_lower_bound_check(theta: Callable, h_bar: Callable, T: float, x: float,
                                  n_paths: int, stream: NoiseStream,
                                  n_steps: int = 100) -> bool:
    """Control v = 0 in the variational formula: E[exponent] <= log E[exp(exponent)]."""
    est = feynman_kac_mc(theta, h_bar, T, x, n_paths, stream, n_steps)
    slack = 3.0 * math.hypot(est.std_err, est.exponent_std_err)
    return est.exponent_mean <= est.mean + slack


def kpz_reference(theta: Callable, h_bar: Callable, T: float, x: float, N: int = 63,
                  dt: float = 1e-4) -> float:
    """Noise-free spectral KPZ solve with forcing theta, evaluated at x."""
    grid = GridSpec(N)
    cfg = SimConfig(grid, preset_spectral(), dt, T, equation="kpz", noise_scale=0.0,
                    forcing=theta)
    traj = run(cfg, LatticeField(grid, np.asarray(h_bar(grid.sites), dtype=float)))
    return float(extend(traj.final, x))
