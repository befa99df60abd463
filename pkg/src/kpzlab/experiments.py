"""Experiment drivers: configuration, statistics and report files.

Every driver takes a resolved configuration dictionary (defaults merged,
schema checked) and returns a report dictionary.  Reports embed the config
and the library version; wall-clock data goes to a separate metadata file so
report files are byte-identical across reruns.
"""

from __future__ import annotations

import copy
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
from scipy import stats

from . import __version__
from .besov import estimate_regularity
from .constants import (
    KernelParams,
    QuadratureSpec,
    correction_constant,
    discrete_zero_chaos,
    kpz_cancellation,
    renormalization_constant,
    vertex_V5_l1,
)
from .dynamics import (
    ConfigError,
    SimConfig,
    cole_hopf_check,
    feynman_kac_mc,
    kpz_reference,
    run,
    to_coeff,
    to_sites,
)
from .grid import GridSpec, LatticeField, SpectralField
from .noise import NoiseStream, invariant_sample, ou_coeffs
from .operators import PRESETS, Scheme, validate

CONFIG_VERSION = 1
MIN_INVARIANCE_REPLICAS = 64

# exit codes
EXIT_OK, EXIT_INTERNAL, EXIT_BLOWUP, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2, 3, 4


# configuration ------------------------------------------------------------

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT = {"type": "integer"}
_SEED = {"type": "integer", "minimum": 0}

_SCHEME = {
    "oneOf": [
        {"type": "string", "enum": sorted(PRESETS)},
        {
            "type": "object",
            "properties": {
                "preset": {"type": "string", "enum": sorted(PRESETS)},
                "kappa": {"type": "number", "minimum": 0},
                "lambda": {"type": "number", "minimum": 0},
            },
            "required": ["preset"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "pi": {"type": ["array", "null"]},
                "nu": {"type": ["array", "null"]},
                "mu": {"type": "array"},
                "name": {"type": "string"},
            },
            "required": ["pi", "nu", "mu"],
            "additionalProperties": False,
        },
    ]
}

_MOLLIFIER = {"type": "string", "enum": ["indicator", "bump"]}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


SCHEMAS = {
    "simulate": _obj({
        "version": {"const": CONFIG_VERSION},
        "N": _INT,
        "scheme": _SCHEME,
        "equation": {"enum": ["burgers", "kpz", "she"]},
        "dt": _POS,
        "t_end": {"type": "number", "minimum": 0},
        "renorm_constant": _NUM,
        "noise_scale": _NUM,
        "nonlinear": {"type": "boolean"},
        "mollifier": {"oneOf": [{"type": "null"}, _MOLLIFIER]},
        "eps_reg": {"oneOf": [{"type": "null"}, _POS]},
        "blowup_threshold": {"oneOf": [{"type": "null"}, _POS]},
        "snapshot_stride": {"type": "integer", "minimum": 0},
        "initial": _obj({
            "kind": {"enum": ["zero", "one", "cos", "invariant", "ou"]},
            "amplitude": _NUM,
            "m": _NUM,
        }, ["kind"]),
        "seed": _SEED,
        "stream_id": _SEED,
    }, ["version"]),
    "invariance": _obj({
        "version": {"const": CONFIG_VERSION},
        "N": _INT,
        "scheme": _SCHEME,
        "m": _NUM,
        "replicas": _INT,
        "t_end": _POS,
        "dt": _POS,
        "seed": _SEED,
        "level": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    }, ["version"]),
    "constants": _obj({
        "version": {"const": CONFIG_VERSION},
        "scheme": _SCHEME,
        "abs_tol": _POS,
        "renorm": _obj({"mollifier": _MOLLIFIER, "N": {"type": "array", "items": _INT}}),
        "vertex": _obj({"k": {"type": "array", "items": _INT}, "K_trunc": _INT,
                        "T_trunc": _POS}),
        "zero_chaos": _obj({"N": {"type": "array", "items": _INT}, "t": _POS}),
        "cancellation": _obj({"mollifier": _MOLLIFIER, "K_trunc": _INT, "abs_tol": _POS}),
    }, ["version"]),
    "regularity": _obj({
        "version": {"const": CONFIG_VERSION},
        "N": _INT,
        "scheme": _SCHEME,
        "replicas": _INT,
        "source": {"enum": ["ou", "white"]},
        "p": {"oneOf": [{"type": "number", "minimum": 1}, {"const": "inf"}]},
        "fit_range": {"oneOf": [{"type": "null"},
                                {"type": "array", "items": _INT, "minItems": 2, "maxItems": 2}]},
        "target": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "seed": _SEED,
    }, ["version"]),
    "cole-hopf": _obj({
        "version": {"const": CONFIG_VERSION},
        "N": _INT,
        "eps_reg": _POS,
        "T": _POS,
        "dts": {"type": "array", "items": _POS, "minItems": 1},
        "replicas": {"type": "integer", "minimum": 1},
        "mollifier": _MOLLIFIER,
        "noise_scale": _NUM,
        "min_order": _NUM,
        "seed": _SEED,
    }, ["version"]),
    "feynman-kac": _obj({
        "version": {"const": CONFIG_VERSION},
        "theta": _obj({"kind": {"enum": ["zero", "const", "cos"]}, "value": _NUM}, ["kind"]),
        "h_bar": _obj({"kind": {"enum": ["zero", "const", "cos"]}, "value": _NUM}, ["kind"]),
        "T": _POS,
        "x": _NUM,
        "n_paths": _INT,
        "n_steps": {"type": "integer", "minimum": 1},
        "N_ref": _INT,
        "dt_ref": _POS,
        "sigmas": _POS,
        "seed": _SEED,
    }, ["version"]),
}

DEFAULTS = {
    "simulate": {
        "N": 63, "scheme": "standard", "equation": "burgers", "dt": 1e-4, "t_end": 0.1,
        "renorm_constant": 0.0, "noise_scale": 1.0, "nonlinear": True, "mollifier": None,
        "eps_reg": None, "blowup_threshold": None, "snapshot_stride": 100,
        "initial": {"kind": "zero", "amplitude": 1.0, "m": 0.0}, "seed": 0, "stream_id": 0,
    },
    "invariance": {
        "N": 63, "scheme": {"preset": "sasamoto_spohn", "kappa": 1.0, "lambda": 0.5},
        "m": 0.0, "replicas": 256, "t_end": 1.0, "dt": 1e-4, "seed": 0, "level": 0.01,
    },
    "constants": {
        "scheme": "standard", "abs_tol": 1e-12,
        "renorm": {"mollifier": "indicator", "N": [101, 201, 401]},
        "vertex": {"k": [8, 16, 32, 64, 128], "K_trunc": 256, "T_trunc": 40.0},
        "zero_chaos": {"N": [255, 511, 1023], "t": 1.0},
        "cancellation": {"mollifier": "indicator", "K_trunc": 64, "abs_tol": 1e-7},
    },
    "regularity": {
        "N": 1023, "scheme": "standard", "replicas": 256, "source": "ou", "p": "inf",
        "fit_range": None, "target": [-0.65, -0.40], "seed": 0,
    },
    "cole-hopf": {
        "N": 63, "eps_reg": 0.25, "T": 0.1, "dts": [4e-5, 2e-5, 1e-5], "replicas": 8,
        "mollifier": "indicator", "noise_scale": 1.0, "min_order": 0.4, "seed": 0,
    },
    "feynman-kac": {
        "theta": {"kind": "cos", "value": 1.0}, "h_bar": {"kind": "zero", "value": 0.0},
        "T": 0.25, "x": 0.0, "n_paths": 10_000, "n_steps": 200, "N_ref": 63,
        "dt_ref": 1e-4, "sigmas": 3.0, "seed": 0,
    },
}

COMMANDS = tuple(SCHEMAS)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "scheme":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(command: str, raw: dict, seed: int | None = None) -> dict:
    """Validate ``raw`` against the command schema and fill in defaults."""
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}")
    try:
        jsonschema.validate(raw, SCHEMAS[command])
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {e.message}") from None
    cfg = _merge(DEFAULTS[command], raw)
    if seed is not None:
        cfg["seed"] = int(seed)
    jsonschema.validate(cfg, SCHEMAS[command])
    return cfg


def load_config(path, command: str, seed: int | None = None) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return resolve_config(command, raw, seed)


def build_scheme(spec) -> Scheme:
    if isinstance(spec, str):
        return PRESETS[spec]()
    if "preset" in spec:
        if spec["preset"] == "sasamoto_spohn":
            return PRESETS["sasamoto_spohn"](spec.get("kappa", 1.0), spec.get("lambda", 0.5))
        if len(spec) > 1:
            raise ConfigError(f"preset {spec['preset']!r} takes no parameters")
        return PRESETS[spec["preset"]]()
    try:
        return Scheme.from_dict(spec)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad inline scheme: {e}") from None


def _grid(N) -> GridSpec:
    try:
        return GridSpec(N)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def threads() -> int:
    try:
        return max(1, int(os.environ.get("KPZLAB_THREADS", "1")))
    except ValueError:
        return 1


# statistics ---------------------------------------------------------------

@dataclass
class StatReport:
    name: str
    statistic: float
    p_value: float
    level: float
    n: int
    passed: bool = field(init=False)
    detail: dict = field(default_factory=dict)

    def __post_init__(self):
        self.passed = bool(self.p_value >= self.level)


def mean_z_test(x: np.ndarray, m: float, var: float, level: float) -> StatReport:
    n = x.size
    z = (x.mean() - m) / math.sqrt(var / n)
    p = 2 * stats.norm.sf(abs(z))
    return StatReport("mean_z", float(z), float(p), level, n, detail={"target_mean": m})


def variance_chi2_test(x: np.ndarray, m: float, var: float, level: float) -> StatReport:
    """Known-mean chi-square: sum (x - m)^2 / var ~ chi2(n), two-sided."""
    n = x.size
    chi = float(np.sum((x - m) ** 2) / var)
    p = 2 * min(stats.chi2.cdf(chi, n), stats.chi2.sf(chi, n))
    return StatReport("variance_chi2", chi, float(min(p, 1.0)), level, n,
                      detail={"target_variance": var, "sample_variance": chi * var / n})


def ks_test(x0: np.ndarray, x1: np.ndarray, level: float) -> StatReport:
    res = stats.ks_2samp(x0, x1)
    return StatReport("ks_two_sample", float(res.statistic), float(res.pvalue), level,
                      x0.size + x1.size)


# drivers --------------------------------------------------------------------

def _chunks(n: int, k: int) -> list[range]:
    k = max(1, min(k, n))
    edges = np.linspace(0, n, k + 1).astype(int)
    return [range(a, b) for a, b in zip(edges[:-1], edges[1:])]


def run_invariance(cfg: dict) -> dict:
    R = cfg["replicas"]
    if R < MIN_INVARIANCE_REPLICAS:
        raise ConfigError(f"need at least {MIN_INVARIANCE_REPLICAS} replicas, got {R}")
    grid = _grid(cfg["N"])
    scheme = build_scheme(cfg["scheme"])
    sim = SimConfig(grid, scheme, cfg["dt"], cfg["t_end"], equation="burgers")
    m, seed = cfg["m"], cfg["seed"]

    def work(idx: range):
        streams = [NoiseStream(seed, r) for r in idx]
        x0 = np.stack([invariant_sample(grid, m, s).values for s in streams])
        traj = run(sim, LatticeField(grid, x0), streams)
        return x0, to_sites(traj.states[-1], grid), traj.blown_up_at

    with ThreadPoolExecutor(max_workers=threads()) as ex:
        parts = list(ex.map(work, _chunks(R, threads())))
    x0 = np.concatenate([p[0] for p in parts])
    x1 = np.concatenate([p[1] for p in parts])
    blown = [p[2] for p in parts if p[2] is not None]
    var = 0.5 / grid.eps
    level = cfg["level"]
    tests = [mean_z_test(x1.ravel(), m, var, level),
             variance_chi2_test(x1.ravel(), m, var, level),
             ks_test(x0.ravel(), x1.ravel(), level)]
    conservative = scheme.name.startswith("sasamoto_spohn")
    results = {
        "tests": [asdict(t) for t in tests],
        "warning": None if conservative else
        f"scheme {scheme.name!r} is not of Sasamoto-Spohn type; invariance is not claimed",
        "blown_up_at": min(blown) if blown else None,
    }
    checks = {t.name: t.passed for t in tests}
    return _report("invariance", cfg, results, checks, blown_up=bool(blown))


def run_constants(cfg: dict) -> dict:
    quad = QuadratureSpec(abs_tol=cfg["abs_tol"])
    scheme = build_scheme(cfg["scheme"])
    t0 = time.perf_counter()
    c = correction_constant(scheme, quad)
    c_time = time.perf_counter() - t0
    renorm = []
    for N in cfg["renorm"]["N"]:
        r = renormalization_constant(cfg["renorm"]["mollifier"], N=N)
        renorm.append({"N": N, "eps": r.eps_reg, "continuum": r.continuum,
                       "lattice_sum": r.lattice_sum, "relative_gap": r.relative_gap})
    vp = cfg["vertex"]
    params = KernelParams(K_trunc=vp["K_trunc"], T_trunc=vp["T_trunc"])
    vertex = [{"k": k, "l1": vertex_V5_l1(k, params).value} for k in vp["k"]]
    zc = cfg["zero_chaos"]
    zero_chaos = [{"N": N, "t": zc["t"], "value": discrete_zero_chaos(scheme, N, zc["t"])}
                  for N in zc["N"]]
    cp = cfg["cancellation"]
    canc = kpz_cancellation(cp["mollifier"], QuadratureSpec(abs_tol=cp["abs_tol"]),
                            K_trunc=cp["K_trunc"]).as_dict()
    results = {
        "c": c,
        "c_eps_continuum": [r["continuum"] for r in renorm],
        "c_eps_lattice": [r["lattice_sum"] for r in renorm],
        "renormalization": renorm,
        "vertex_table": vertex,
        "zero_chaos_table": zero_chaos,
        "cancellation": canc,
    }
    checks = {
        "renorm_gap_within_2eps": all(r["relative_gap"] <= 2 * r["eps"] for r in renorm),
        "cancellation_symmetric_zero": abs(canc["symmetric_zero"]) <= 1e-12 * canc["scale"],
        "cancellation_stable": canc["relative_change"] <= 0.01
        and math.isfinite(canc["regularized_limit"]),
    }
    ratios = [v["l1"] / abs(v["k"]) ** 0.25 for v in vertex if abs(v["k"]) >= 8]
    if len(ratios) > 1:
        checks["vertex_ratio_nonincreasing"] = all(b <= a for a, b in zip(ratios, ratios[1:]))
    if scheme.name == "standard":
        checks["c_equals_one_eighth"] = abs(c - 0.125) <= 1e-8
        gaps = [abs(z["value"] - c) for z in zero_chaos]
        checks["zero_chaos_gap_shrinks"] = all(b < a for a, b in zip(gaps, gaps[1:]))
        checks["zero_chaos_within_5pct"] = gaps[-1] <= 0.05 * abs(c)
    elif scheme.name.startswith("sasamoto_spohn"):
        checks["c_is_zero"] = abs(c) <= 1e-10
        checks["zero_chaos_is_zero"] = all(abs(z["value"]) <= 1e-10 for z in zero_chaos)
    results["timings"] = {"correction_constant_s": c_time}
    return _report("constants", cfg, results, checks)


def run_regularity(cfg: dict) -> dict:
    grid = _grid(cfg["N"])
    scheme = build_scheme(cfg["scheme"])
    rep = validate(scheme)
    if cfg["source"] == "ou" and not rep.h_f:
        raise ConfigError(f"scheme {scheme.name!r} fails (H_f)")
    z = np.stack([NoiseStream(cfg["seed"], r).next(grid.N) for r in range(cfg["replicas"])])
    if cfg["source"] == "ou":
        coeff = ou_coeffs(z, grid, scheme)
    else:
        coeff = to_coeff(np.sqrt(0.5 / grid.eps) * z, grid)
    p = math.inf if cfg["p"] == "inf" else float(cfg["p"])
    try:
        fit = estimate_regularity(SpectralField(grid, coeff, True), p, cfg["fit_range"])
    except ValueError as e:
        raise ConfigError(str(e)) from None
    lo, hi = cfg["target"]
    results = dict(fit.as_dict())
    results["profile"] = [{"j": int(j), "block_norm": float(b)}
                          for j, b in zip(fit.profile.js, fit.profile.norms)]
    report = _report("regularity", cfg, results, {"alpha_in_target": lo <= fit.alpha_hat <= hi})
    report["_profile"] = fit.profile
    report["_fit"] = fit
    return report


def run_cole_hopf(cfg: dict) -> dict:
    rep = cole_hopf_check(N=cfg["N"], eps_reg=cfg["eps_reg"], T=cfg["T"], dts=cfg["dts"],
                          n_replicas=cfg["replicas"], seed=cfg["seed"],
                          mollifier=cfg["mollifier"], noise_scale=cfg["noise_scale"])
    errs = rep.sup_errors
    checks = {"errors_decrease": all(b < a for a, b in zip(errs, errs[1:]))}
    if len(errs) > 1:
        checks["order_at_least_min"] = rep.dt_order >= cfg["min_order"]
    return _report("cole-hopf", cfg, rep.as_dict(), checks)


def _space_time_fn(spec: dict):
    kind, v = spec["kind"], spec.get("value", 1.0)
    if kind == "zero":
        return lambda t, x: np.zeros_like(np.asarray(x, dtype=float))
    if kind == "const":
        return lambda t, x: np.full_like(np.asarray(x, dtype=float), v)
    return lambda t, x: v * np.cos(x)


def run_feynman_kac(cfg: dict) -> dict:
    if cfg["n_paths"] < 100:
        raise ConfigError("n_paths must be at least 100")
    theta = _space_time_fn(cfg["theta"])
    hb = _space_time_fn(cfg["h_bar"])
    h_bar = lambda x: hb(0.0, x)  # noqa: E731
    stream = NoiseStream(cfg["seed"], 0)
    est = feynman_kac_mc(theta, h_bar, cfg["T"], cfg["x"], cfg["n_paths"], stream,
                         cfg["n_steps"])
    ref = kpz_reference(theta, h_bar, cfg["T"], cfg["x"], N=cfg["N_ref"], dt=cfg["dt_ref"])
    k = cfg["sigmas"]
    jensen_slack = k * math.hypot(est.std_err, est.exponent_std_err)
    results = {"estimate": asdict(est), "reference": ref, "difference": est.mean - ref}
    checks = {
        "matches_reference": abs(est.mean - ref) <= k * est.std_err,
        "jensen_lower_bound": est.exponent_mean <= est.mean + jensen_slack,
    }
    return _report("feynman-kac", cfg, results, checks)


def initial_state(cfg: dict, grid: GridSpec, scheme: Scheme):
    init = cfg["initial"]
    kind, amp = init["kind"], init.get("amplitude", 1.0)
    x = grid.sites
    if kind == "zero":
        return LatticeField(grid, np.zeros(grid.N))
    if kind == "one":
        return LatticeField(grid, np.ones(grid.N))
    if kind == "cos":
        return LatticeField(grid, amp * np.cos(x))
    # random initial data uses a stream id disjoint from the driving noise
    stream = NoiseStream(cfg["seed"], 2**63 + cfg["stream_id"])
    if kind == "invariant":
        return invariant_sample(grid, init.get("m", 0.0), stream)
    return SpectralField(grid, ou_coeffs(stream.next(grid.N), grid, scheme), True)


def run_simulate(cfg: dict) -> dict:
    grid = _grid(cfg["N"])
    scheme = build_scheme(cfg["scheme"])
    sim = SimConfig(grid, scheme, cfg["dt"], cfg["t_end"], equation=cfg["equation"],
                    renorm_constant=cfg["renorm_constant"],
                    blowup_threshold=cfg["blowup_threshold"], mollifier=cfg["mollifier"],
                    eps_reg=cfg["eps_reg"], seed=cfg["seed"], stream_id=cfg["stream_id"],
                    noise_scale=cfg["noise_scale"], nonlinear=cfg["nonlinear"],
                    snapshot_stride=cfg["snapshot_stride"])
    traj = run(sim, initial_state(cfg, grid, scheme))
    rows = traj.summary_rows()
    results = {"n_snapshots": len(traj.times), "blown_up_at": traj.blown_up_at,
               "final": rows[-1], "flags": traj.flags}
    report = _report("simulate", cfg, results, {"no_blowup": traj.blown_up_at is None},
                     blown_up=traj.blown_up_at is not None)
    report["_trajectory"] = traj
    return report


RUNNERS = {
    "simulate": run_simulate,
    "invariance": run_invariance,
    "constants": run_constants,
    "regularity": run_regularity,
    "cole-hopf": run_cole_hopf,
    "feynman-kac": run_feynman_kac,
}


def _report(command: str, cfg: dict, results: dict, checks: dict, blown_up: bool = False) -> dict:
    checks = {k: bool(v) for k, v in checks.items()}
    return {
        "command": command,
        "library_version": __version__,
        "config": cfg,
        "results": results,
        "checks": checks,
        "passed": all(checks.values()),
        "blown_up": blown_up,
    }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items() if not k.startswith("_")}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def write_outputs(report: dict, out_dir, started: float, elapsed: float) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    path = out / "report.json"
    path.write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
    written.append(path)
    meta = {"started_unix": started, "elapsed_s": elapsed, "library_version": __version__}
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    written.append(out / "metadata.json")
    traj = report.get("_trajectory")
    if traj is not None:
        traj.write_jsonl(out / "trajectory.jsonl")
        traj.write_summary_csv(out / "summary.csv")
        written += [out / "trajectory.jsonl", out / "summary.csv"]
    if "_fit" in report:
        report["_profile"].write_csv(out / "profile.csv")
        report["_fit"].write_json(out / "regression.json")
        written += [out / "profile.csv", out / "regression.json"]
    return written
