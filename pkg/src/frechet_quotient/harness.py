"""Experiment runners behind the command line.

Every runner takes an ``ExperimentConfig`` and returns a ``Table``: a fixed
list of columns, one flat row per result (for CSV) and a nested record per
result (for JSON). Each row echoes the seed, sample count and chunk size it
was computed with.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import actions as ac
from . import noise as nz
from .analytic import rho_tilde, rho_tilde_certified, rho_tilde_upper, rotation_bias_limit, rotation_exact_bias
from .bounds import (
    BiasReport,
    BoundInputs,
    asymptotic_slope,
    gaussian_upper_bound,
    general_upper_bound,
    lower_bound_delta,
    lower_bound_delta_star,
)
from .estimators import (
    estimate_nu,
    mc_fold_probability,
    mc_gradient_at,
    mc_gradient_inner,
    mc_quotient_variance,
    measure_bias,
)


class ConfigError(ValueError):
    """Invalid experiment configuration; the message starts with the field path."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class ExperimentConfig:
    action: ac.Action
    template: np.ndarray
    noise: nz.NoiseSpec
    sweep: list[float] = field(default_factory=lambda: [1.0])
    n_samples: int = 20000
    restarts: int = 3
    seed: int = 0
    workers: int = 1
    bootstrap: int = 200
    chunk_size: int = nz.DEFAULT_CHUNK
    templates: list[tuple[str, np.ndarray]] = field(default_factory=list)
    nu_samples: tuple[int, int] = (1000, 100000)
    dims: list[int] = field(default_factory=lambda: [2, 10, 100])
    scales: list[float] = field(default_factory=lambda: [1.0, 10.0, 100.0])
    t0_norm: float = 1.0
    fd_step: float = 1e-4
    d_values: list[float] = field(default_factory=lambda: [1.0])
    raw: dict = field(default_factory=dict)

    @property
    def stream(self) -> nz.SampleStream:
        return nz.SampleStream(self.seed)

    def provenance(self) -> dict:
        return {"seed": self.seed, "n_samples": self.n_samples, "chunk_size": self.chunk_size}


@dataclass
class Table:
    columns: list[str]
    rows: list[dict]
    records: list[dict]


# --------------------------------------------------------------------------
# configuration parsing


def parse_action(spec) -> ac.Action:
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("action", "expected an object with a 'kind' field")
    kind = spec["kind"]
    try:
        if kind in ("swap", "SwapR2"):
            return ac.SwapR2()
        if kind in ("torus", "TorusTranslation"):
            return ac.TorusTranslation(tuple(spec["shape"]))
        if kind in ("rotation", "FullRotation"):
            return ac.FullRotation(int(spec["n"]))
    except KeyError as exc:
        raise ConfigError(f"action.{exc.args[0]}", "missing field") from None
    except (ac.ActionError, TypeError, ValueError) as exc:
        raise ConfigError("action", str(exc)) from None
    raise ConfigError("action.kind", f"unknown action kind {kind!r}")


def parse_noise(spec, dim: int, path: str = "noise") -> nz.NoiseSpec:
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(path, "expected an object with a 'kind' field")
    kind = spec["kind"]
    try:
        if kind == "gaussian":
            return nz.IsotropicGaussian(float(spec.get("scale", 1.0)), dim)
        if kind == "ball":
            return nz.UniformBall(float(spec.get("radius", 1.0)), dim)
        if kind == "mixture":
            noise = nz.FiniteMixture(spec["points"], spec["probs"])
            if noise.dim != dim:
                raise ConfigError(f"{path}.points", f"points have dimension {noise.dim}, action has {dim}")
            return noise
    except KeyError as exc:
        raise ConfigError(f"{path}.{exc.args[0]}", "missing field") from None
    except (nz.NoiseError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path, str(exc)) from None
    raise ConfigError(f"{path}.kind", f"unknown noise kind {kind!r}")


def make_template(spec, action: ac.Action, path: str = "template") -> np.ndarray:
    """A literal list of coordinates or a named generator."""
    if isinstance(spec, (list, tuple)):
        try:
            return ac.as_point(spec, action.dim)
        except ac.ActionError as exc:
            raise ConfigError(path, str(exc)) from None
    if not isinstance(spec, dict) or "generator" not in spec:
        raise ConfigError(path, "expected a list of coordinates or an object with a 'generator' field")
    gen = spec["generator"]
    dim = action.dim
    shape = action.shape if isinstance(action, ac.TorusTranslation) else (dim,)
    amp = float(spec.get("amplitude", 1.0))
    if gen == "constant":
        return np.full(dim, float(spec.get("value", 1.0)))
    if gen == "step":
        x = np.zeros(shape)
        x[: max(1, shape[0] // 2)] = amp
        return x.ravel()
    if gen == "sine":
        grids = np.meshgrid(*[np.arange(k) / k for k in shape], indexing="ij")
        freq = float(spec.get("frequency", 1.0))
        return (amp * sum(np.sin(2 * np.pi * freq * g) for g in grids) + float(spec.get("offset", 0.0))).ravel()
    if gen in ("random", "random-smooth"):
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        x = rng.standard_normal(shape)
        if gen == "random-smooth":
            width = float(spec.get("width", 3.0))
            kernel = np.ones(shape)
            for axis, k in enumerate(shape):
                f = np.fft.fftfreq(k)
                kshape = [1] * len(shape)
                kshape[axis] = k
                kernel = kernel * np.exp(-2 * (np.pi * width * f) ** 2).reshape(kshape)
            x = np.fft.ifftn(np.fft.fftn(x) * kernel).real
        return (amp * x).ravel()
    if gen == "swap-offset":
        if dim != 2:
            raise ConfigError(f"{path}.generator", "swap-offset needs a two-dimensional action")
        c, d = float(spec.get("center", 1.0)), float(spec.get("d", 1.0))
        return np.array([c + d / math.sqrt(2), c - d / math.sqrt(2)])
    if gen == "axis":
        x = np.zeros(dim)
        x[0] = float(spec.get("norm", 1.0))
        return x
    raise ConfigError(f"{path}.generator", f"unknown template generator {gen!r}")


def _positive_int(raw, key, default):
    v = raw.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v or v < 1:
        raise ConfigError(key, f"expected a positive integer, got {v!r}")
    return int(v)


def _float_list(raw, key, default, positive=True, sort=True):
    v = raw.get(key, default)
    if not isinstance(v, (list, tuple)) or not v:
        raise ConfigError(key, "expected a non-empty list of numbers")
    try:
        vals = [float(x) for x in v]
    except (TypeError, ValueError):
        raise ConfigError(key, "expected a non-empty list of numbers") from None
    if positive and any(x <= 0 or not math.isfinite(x) for x in vals):
        raise ConfigError(key, "values must be positive and finite")
    if sort and vals != sorted(vals):
        raise ConfigError(key, "values must be sorted in increasing order")
    return vals


DEFAULTS = {
    "bias-sweep": {
        "action": {"kind": "swap"},
        "template": {"generator": "swap-offset", "d": 1.0},
        "noise": {"kind": "gaussian", "scale": 1.0},
        "sweep": [0.25, 0.5, 1.0, 2.0, 4.0],
        "n_samples": 20000,
    },
    "nu-table": {
        "action": {"kind": "torus", "shape": [100]},
        "noise": {"kind": "gaussian"},
        "templates": [
            {"name": "constant", "generator": "constant"},
            {"name": "step", "generator": "step"},
            {"name": "sine", "generator": "sine"},
            {"name": "random", "generator": "random", "seed": 1},
            {"name": "random-smooth", "generator": "random-smooth", "seed": 1, "width": 2.0},
        ],
        "nu_samples": [1000, 100000],
    },
    "rotation-compare": {
        "action": {"kind": "rotation", "n": 2},
        "noise": {"kind": "gaussian"},
        "dims": [2, 10, 100],
        "scales": [1.0, 10.0, 100.0],
        "t0_norm": 1.0,
        "n_samples": 100000,
    },
    "gradient-audit": {
        "action": {"kind": "swap"},
        "template": [2.0, 1.0],
        "noise": {"kind": "gaussian", "scale": 1.0},
        "n_samples": 100000,
        "fd_step": 1e-4,
    },
    "analytic": {
        "action": {"kind": "swap"},
        "noise": {"kind": "gaussian"},
        "d_values": [0.0, 1.0],
        "sweep": [0.25, 0.5, 1.0, 2.0, 4.0],
        "dims": [2, 10, 100],
    },
}


def load_config(raw: dict, command: str) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "the configuration must be a JSON object")
    merged = dict(DEFAULTS.get(command, {}))
    merged.update(raw)
    action = parse_action(merged.get("action"))
    noise = parse_noise(merged.get("noise", {"kind": "gaussian"}), action.dim)
    template_spec = merged.get("template", {"generator": "axis"} if isinstance(action, ac.FullRotation)
                               else {"generator": "random", "seed": 0})
    template = make_template(template_spec, action)
    templates = []
    for i, t in enumerate(merged.get("templates", [])):
        name = t.get("name", f"template{i}") if isinstance(t, dict) else f"template{i}"
        templates.append((str(name), make_template(t, action, f"templates[{i}]")))
    seed = merged.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("seed", f"expected an unsigned 64-bit integer, got {seed!r}")
    nu_samples = merged.get("nu_samples", [1000, 100000])
    if not (isinstance(nu_samples, (list, tuple)) and len(nu_samples) == 2
            and all(isinstance(k, int) and k >= 2 for k in nu_samples)):
        raise ConfigError("nu_samples", "expected two sample counts >= 2")
    dims = merged.get("dims", [2, 10, 100])
    if not (isinstance(dims, (list, tuple)) and dims and all(isinstance(k, int) and k >= 2 for k in dims)):
        raise ConfigError("dims", "expected a list of integers >= 2")
    restarts = merged.get("restarts", 3)
    if isinstance(restarts, bool) or not isinstance(restarts, int) or restarts < 1:
        raise ConfigError("restarts", f"expected a positive integer, got {restarts!r}")
    bootstrap = merged.get("bootstrap", 200)
    if isinstance(bootstrap, bool) or not isinstance(bootstrap, int) or bootstrap < 0:
        raise ConfigError("bootstrap", f"expected a non-negative integer, got {bootstrap!r}")
    return ExperimentConfig(
        action=action,
        template=template,
        noise=noise,
        sweep=_float_list(merged, "sweep", [1.0]),
        n_samples=_positive_int(merged, "n_samples", 20000),
        restarts=restarts,
        seed=seed,
        workers=_positive_int(merged, "workers", 1),
        bootstrap=bootstrap,
        chunk_size=_positive_int(merged, "chunk_size", nz.DEFAULT_CHUNK),
        templates=templates,
        nu_samples=tuple(nu_samples),
        dims=list(dims),
        scales=_float_list(merged, "scales", [1.0, 10.0, 100.0], positive=False),
        t0_norm=float(merged.get("t0_norm", 1.0)),
        fd_step=float(merged.get("fd_step", 1e-4)),
        d_values=_float_list(merged, "d_values", [1.0], positive=False, sort=False),
        raw=merged,
    )


# --------------------------------------------------------------------------
# runners

BIAS_COLUMNS = [
    "scale", "sigma", "measured_bias", "stderr", "delta", "delta_star", "upper_general",
    "upper_gaussian", "analytic_exact", "fold_probability", "a_star", "nu",
    "asymptotic_slope", "ordering_ok", "seed", "n_samples", "chunk_size", "restarts", "bootstrap",
]


def bias_report(cfg: ExperimentConfig, scale: float) -> BiasReport:
    """Measured bias, bounds and reference values for the noise ``scale * noise``."""
    a, t0 = cfg.action, cfg.template
    noise = nz.scaled(cfg.noise, scale)
    eps, sigma = nz.normalize_to_unit_energy(noise)
    kw = dict(chunk_size=cfg.chunk_size, workers=cfg.workers)
    stream = cfg.stream
    n = cfg.n_samples

    meas = measure_bias(a, noise, t0, n, cfg.restarts, stream, n_boot=cfg.bootstrap, **kw)
    norm_t0 = float(np.linalg.norm(t0))
    nonzero = norm_t0 > 0
    fold = mc_fold_probability(a, noise, t0, n, stream, **kw).value if nonzero else float("nan")
    nu_t0 = estimate_nu(a, eps, t0, n, stream, **kw).value if nonzero else 0.0
    dist_fixed = a.dist_to_fixed(t0)

    a_star = meas.a_star if nonzero else 1.0
    inputs = BoundInputs(norm_t0=norm_t0, expected_norm_X=meas.mean_norm, sigma=sigma,
                         a_star=max(1.0, a_star), nu=min(max(nu_t0, 0.0), 1.0),
                         dist_t0_fixed=dist_fixed)
    delta, delta_star = lower_bound_delta(inputs), lower_bound_delta_star(inputs)

    shifted = meas.estimate - a.fixed_point_projection(t0)
    if np.linalg.norm(shifted) > 0:
        nu_m = estimate_nu(a, eps, shifted, n, stream, **kw).value
    else:
        nu_m = 0.0
    upper = general_upper_bound(sigma, min(max(nu_m, 0.0), 1.0), dist_fixed).value

    upper_gauss = None
    if a.is_finite and isinstance(noise, nz.IsotropicGaussian):
        upper_gauss = gaussian_upper_bound(noise.scale, a.order)
    exact = None
    if isinstance(noise, nz.IsotropicGaussian):
        if isinstance(a, ac.SwapR2):
            exact = rho_tilde(dist_fixed, noise.scale)
        elif isinstance(a, ac.FullRotation) and nonzero:
            exact = rotation_exact_bias(a.n, norm_t0, noise.scale, n, stream).value
    slope = asymptotic_slope(min(nu_t0, 1.0)) if nu_t0 > 0.0 else 0.0
    return BiasReport(
        scale=scale, sigma=sigma, measured_bias=meas.bias.value, stderr=meas.bias.stderr,
        delta=delta, delta_star=delta_star, upper_general=upper, upper_gaussian=upper_gauss,
        analytic_exact=exact, fold_probability=fold, a_star=a_star, nu=nu_t0,
        asymptotic_slope=slope, config=cfg.provenance(),
    )


def run_bias_sweep(cfg: ExperimentConfig) -> Table:
    rows, records = [], []
    for scale in cfg.sweep:
        rep = bias_report(cfg, scale)
        row = {k: getattr(rep, k) for k in BIAS_COLUMNS[:13]}
        row.update(ordering_ok=rep.ordering_ok(), restarts=cfg.restarts, bootstrap=cfg.bootstrap,
                   **cfg.provenance())
        rows.append(row)
        rec = rep.as_dict()
        rec["measured_bias"] = {"value": rep.measured_bias, "stderr": rep.stderr,
                                "n_samples": cfg.n_samples}
        rec.pop("stderr")
        rec["ordering_ok"] = rep.ordering_ok()
        records.append(rec)
    return Table(BIAS_COLUMNS, rows, records)


NU_COLUMNS = [
    "template", "n_small", "nu_small", "stderr_small", "n_large", "nu_large", "stderr_large",
    "dist_fixed_normalized", "expected_noise_norm", "nu_upper_bound", "within_bound",
    "seed", "chunk_size",
]


def run_nu_table(cfg: ExperimentConfig) -> Table:
    a = cfg.action
    if not isinstance(a, ac.TorusTranslation):
        raise ConfigError("action.kind", "nu-table needs a torus translation action")
    eps, _ = nz.normalize_to_unit_energy(cfg.noise)
    e_norm = nz.expected_norm(eps)
    kw = dict(chunk_size=cfg.chunk_size, workers=cfg.workers)
    rows, records = [], []
    templates = cfg.templates or [("template", cfg.template)]
    for name, t0 in templates:
        unit = t0 / np.linalg.norm(t0)
        small = estimate_nu(a, eps, t0, cfg.nu_samples[0], cfg.stream, **kw)
        large = estimate_nu(a, eps, t0, cfg.nu_samples[1], cfg.stream, **kw)
        dist = a.dist_to_fixed(unit)
        bound = dist * e_norm
        within = large.value <= bound + 2 * large.stderr
        rows.append({
            "template": name, "n_small": small.n_samples, "nu_small": small.value,
            "stderr_small": small.stderr, "n_large": large.n_samples, "nu_large": large.value,
            "stderr_large": large.stderr, "dist_fixed_normalized": dist,
            "expected_noise_norm": e_norm, "nu_upper_bound": bound, "within_bound": within,
            "seed": cfg.seed, "chunk_size": cfg.chunk_size,
        })
        records.append({"template": name, "nu_small": small.as_dict(), "nu_large": large.as_dict(),
                        "dist_fixed_normalized": dist, "nu_upper_bound": bound,
                        "within_bound": within, "seed": cfg.seed, "chunk_size": cfg.chunk_size})
    return Table(NU_COLUMNS, rows, records)


ROTATION_COLUMNS = [
    "n", "s", "cb_over_s", "stderr", "limit", "relative_deviation", "nu", "lower_slope",
    "lower_slope_nu1", "slope_ok", "seed", "n_samples", "chunk_size",
]


def run_rotation_comparison(cfg: ExperimentConfig, dims=None, scales=None) -> Table:
    dims = list(dims or cfg.dims)
    scales = list(scales if scales is not None else cfg.scales)
    if any(k < 2 for k in dims):
        raise ConfigError("dims", "rotation dimensions must be >= 2")
    if any(s < 0 for s in scales):
        raise ConfigError("scales", "scales must be non-negative")
    s_max = max(scales)
    kw = dict(chunk_size=cfg.chunk_size, workers=cfg.workers)
    rows, records = [], []
    for n in dims:
        a = ac.FullRotation(n)
        t0 = np.zeros(n)
        t0[0] = cfg.t0_norm
        eps, _ = nz.normalize_to_unit_energy(nz.IsotropicGaussian(1.0, n))
        nu = estimate_nu(a, eps, t0, cfg.n_samples, cfg.stream, **kw)
        lower = math.sqrt(n) * asymptotic_slope(min(nu.value, 1.0))
        lower_nu1 = math.sqrt(n) * (math.sqrt(2.0) - 1.0)
        limit = rotation_bias_limit(n)
        for s in scales:
            if s == 0:
                cb, se, lo, lo1 = 0.0, 0.0, 0.0, 0.0
            else:
                meas = measure_bias(a, nz.IsotropicGaussian(s, n), t0, cfg.n_samples, cfg.restarts,
                                    cfg.stream, n_boot=cfg.bootstrap, **kw)
                cb, se, lo, lo1 = meas.bias.value / s, meas.bias.stderr / s, lower, lower_nu1
            ok = (lo <= cb) if s == s_max and s > 0 else True
            row = {
                "n": n, "s": s, "cb_over_s": cb, "stderr": se, "limit": limit if s > 0 else 0.0,
                "relative_deviation": (cb - limit) / limit if s > 0 else 0.0,
                "nu": nu.value if s > 0 else 0.0, "lower_slope": lo, "lower_slope_nu1": lo1,
                "slope_ok": ok, **cfg.provenance(),
            }
            rows.append(row)
            rec = dict(row)
            rec["cb_over_s"] = {"value": cb, "stderr": se, "n_samples": cfg.n_samples}
            rec.pop("stderr")
            records.append(rec)
    return Table(ROTATION_COLUMNS, rows, records)


GRADIENT_COLUMNS = ["quantity", "index", "value", "stderr", "seed", "n_samples", "chunk_size"]


def gradient_audit(cfg: ExperimentConfig) -> dict:
    a, t0, noise = cfg.action, cfg.template, cfg.noise
    if not a.is_finite:
        raise ConfigError("action.kind", "the gradient audit needs a finite group")
    a.require_regular(t0)
    kw = dict(chunk_size=cfg.chunk_size, workers=cfg.workers)
    n, stream = cfg.n_samples, cfg.stream
    grad = mc_gradient_at(a, noise, t0, t0, n, stream, **kw)
    h = cfg.fd_step * float(np.linalg.norm(t0))
    fd = np.empty(a.dim)
    for j in range(a.dim):
        e = np.zeros(a.dim)
        e[j] = h
        plus = mc_quotient_variance(a, noise, t0, t0 + e, n, stream, **kw).value
        minus = mc_quotient_variance(a, noise, t0, t0 - e, n, stream, **kw).value
        fd[j] = (plus - minus) / (2 * h)
    norm_g = float(np.linalg.norm(grad.value))
    rel = float(np.linalg.norm(fd - grad.value) / norm_g) if norm_g > 0 else float(np.linalg.norm(fd))
    inner = mc_gradient_inner(a, noise, t0, n, stream, **kw)
    fold = mc_fold_probability(a, noise, t0, n, stream, **kw)
    return {
        "gradient": grad, "fd_gradient": fd, "relative_error": rel, "inner": inner,
        "fold_probability": fold, "certified": bool(inner.value < -3.0 * inner.stderr),
    }


def run_gradient_audit(cfg: ExperimentConfig) -> Table:
    res = gradient_audit(cfg)
    prov = cfg.provenance()
    g = res["gradient"]
    rows = []
    for j in range(len(g.value)):
        rows.append({"quantity": "gradient", "index": j, "value": g.value[j], "stderr": g.stderr[j], **prov})
    for j, v in enumerate(res["fd_gradient"]):
        rows.append({"quantity": "fd_gradient", "index": j, "value": v, "stderr": None, **prov})
    rows.append({"quantity": "relative_error", "index": None, "value": res["relative_error"], "stderr": None, **prov})
    rows.append({"quantity": "inner_gradient_template", "index": None, "value": res["inner"].value,
                 "stderr": res["inner"].stderr, **prov})
    rows.append({"quantity": "fold_probability", "index": None, "value": res["fold_probability"].value,
                 "stderr": res["fold_probability"].stderr, **prov})
    rows.append({"quantity": "inconsistency_certified", "index": None, "value": res["certified"],
                 "stderr": None, **prov})
    record = {
        "gradient": {"value": g.value.tolist(), "stderr": g.stderr.tolist(), "n_samples": g.n_samples},
        "fd_gradient": res["fd_gradient"].tolist(),
        "relative_error": res["relative_error"],
        "inner_gradient_template": res["inner"].as_dict(),
        "fold_probability": res["fold_probability"].as_dict(),
        "inconsistency_certified": res["certified"],
        **prov,
    }
    return Table(GRADIENT_COLUMNS, rows, [record])


ANALYTIC_COLUMNS = ["quantity", "d", "s", "n", "value", "error"]


def run_analytic(cfg: ExperimentConfig, d_values=None, s_values=None, dims=None) -> Table:
    d_values = list(d_values if d_values is not None else cfg.d_values)
    s_values = list(s_values if s_values is not None else cfg.sweep)
    dims = list(dims if dims is not None else cfg.dims)
    rows = []
    for d in d_values:
        for s in s_values:
            try:
                value, err = rho_tilde_certified(d, s)
            except ValueError as exc:
                raise ConfigError("d_values/sweep", str(exc)) from None
            rows.append({"quantity": "rho_tilde", "d": d, "s": s, "n": None, "value": value, "error": err})
            rows.append({"quantity": "rho_tilde_over_s", "d": d, "s": s, "n": None, "value": value / s,
                         "error": err / s})
            rows.append({"quantity": "rho_tilde_upper", "d": d, "s": s, "n": None,
                         "value": rho_tilde_upper(d, s), "error": None})
    for n in dims:
        try:
            rows.append({"quantity": "rotation_bias_limit", "d": None, "s": None, "n": n,
                         "value": rotation_bias_limit(n), "error": None})
        except ValueError as exc:
            raise ConfigError("dims", str(exc)) from None
    return Table(ANALYTIC_COLUMNS, rows, [dict(r) for r in rows])
