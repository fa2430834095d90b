"""Reproducible experiments writing CSV tables and JSON summaries.

Configs are flat ``key = value`` text files; see :data:`CONFIG_KEYS` for the
units and meaning of each key.  Every command writes only inside
``config.out`` and returns a dict describing what it wrote.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .bounds import (
    a10_lower,
    a21_sandwich,
    fit_rate,
    l01_error,
    r01_bound,
    BsdeProblem,
)
from .engine import (
    BudgetExceeded,
    apriori_check,
    estimate_error_series,
    linear_y_iterate,
    linear_y_problem,
    linear_z_problem,
    nested_cost,
    nested_picard,
    zero_driver_problem,
)
from .linear_example import (
    INF,
    IterateEvaluator,
    LinearExampleSpec,
    eval_grad_v,
    eval_v,
    origin_gap,
    v_origin_series,
)
from .special import log_factorial, multi_index_count

DEFAULT_SEED = 20240917
COMMANDS = ("series", "phase-transition", "dimension-sweep", "apriori", "picard-mc")
DRIVERS = ("linear-z", "linear-y", "zero")
TIE_TOL = 1e-12


class ConfigError(ValueError):
    """Invalid configuration value; the message names the offending key."""


# key -> (unit, description); the order here is the serialization order
CONFIG_KEYS = {
    "experiment": ("name", "command the config is meant for"),
    "d": ("count", "space dimension of the linear example"),
    "b_norm_sq": ("dimensionless", "|b|^2; b is taken as (|b|, 0, ..., 0)"),
    "T": ("time", "horizon of the ODE example and the linear-y driver"),
    "k_min": ("iteration index", "first k (or n) of the range"),
    "k_max": ("iteration index", "last k (or n) of the range, inclusive"),
    "paths": ("count", "Monte-Carlo paths; 'auto' picks the command default"),
    "steps": ("count", "time steps on [0, 1]; 'auto' picks the command default"),
    "seed": ("u64", "master seed of the counter-based generator"),
    "threads": ("count", "worker threads; results do not depend on it"),
    "eps": ("dimensionless", "slack of the sandwich bracket, in (0, 1)"),
    "budget": ("samples per level", "nested Monte-Carlo sample counts, one value or one per level"),
    "cost_ceiling": ("evaluations", "largest admissible estimated Monte-Carlo cost"),
    "repetitions": ("count", "independent reruns of picard-mc with seeds seed, seed+1, ..."),
    "driver": ("name", "picard-mc driver: linear-z, linear-y or zero"),
    "L_y": ("1/time", "Lipschitz constant of the linear-y driver"),
    "ks": ("iteration index list", "k values for apriori and dimension-sweep"),
    "lambdas": ("1/time list", "weights lambda; entries may be 'k' or '<c>k' meaning c*k"),
    "alphas": ("dimensionless list", "Gamma-weight exponents for variant iii"),
    "variants": ("name list", "a priori variants among i, ii, iii"),
    "s": ("time", "starting time of the a priori check, in [0, 1)"),
    "dims": ("count list", "dimensions m of the dimension sweep"),
    "scale_alpha": ("dimensionless", "L_z grows like m**scale_alpha in the dimension sweep"),
    "out": ("path", "output directory"),
}

# fields that do not influence any number written
_UNHASHED = ("threads", "out")


@dataclass
class ExperimentConfig:
    experiment: str = "series"
    d: int = 1
    b_norm_sq: float = 4.0
    T: float = 1.0
    k_min: int | None = None
    k_max: int | None = None
    paths: int | None = None
    steps: int | None = None
    seed: int = DEFAULT_SEED
    threads: int = 1
    eps: float = 0.5
    budget: tuple[int, ...] = (200,)
    cost_ceiling: float = 1e9
    repetitions: int = 1
    driver: str = "linear-z"
    L_y: float = 1.0
    ks: tuple[int, ...] | None = None
    lambdas: tuple[str, ...] = ("0.5", "1", "k", "2k")
    alphas: tuple[float, ...] = (1.0, 2.0)
    variants: tuple[str, ...] = ("i", "ii", "iii")
    s: float = 0.0
    dims: tuple[int, ...] = (1, 2, 4, 8, 16)
    scale_alpha: float = 1.0
    out: str = "out"

    # -- text form -------------------------------------------------------

    def serialize(self) -> str:
        lines = []
        for key in CONFIG_KEYS:
            lines.append(f"{key} = {_format_value(getattr(self, key))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        raw = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in CONFIG_KEYS:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            raw[key] = value
        return cls().updated(raw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.parse(Path(path).read_text())

    def updated(self, raw: dict) -> "ExperimentConfig":
        """Copy with the string values in ``raw`` parsed and applied."""
        types = {f.name: f.type for f in fields(self)}
        values = {}
        for key, text in raw.items():
            if key not in types:
                raise ConfigError(f"unknown key {key!r}")
            values[key] = _parse_value(key, types[key], text)
        return dataclasses.replace(self, **values)

    def digest(self) -> str:
        hashed = dataclasses.replace(self, threads=1, out="")
        text = "".join(l + "\n" for l in hashed.serialize().splitlines() if l.split(" =")[0] not in _UNHASHED)
        return hashlib.sha256(text.encode()).hexdigest()

    # -- helpers ---------------------------------------------------------

    def k_range(self, lo: int, hi: int) -> range:
        k_min = lo if self.k_min is None else self.k_min
        k_max = hi if self.k_max is None else self.k_max
        return range(k_min, k_max + 1)

    def example(self) -> LinearExampleSpec:
        return LinearExampleSpec.from_norm_sq(self.b_norm_sq, self.d)


def _format_value(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _scalar(key: str, kind: str, text: str):
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            val = float(text)
            if not math.isfinite(val):
                raise ValueError
            return val
    except ValueError:
        raise ConfigError(f"{key}: cannot read {text!r} as {kind}") from None
    return text


def _parse_value(key: str, annotation: str, text: str):
    text = text.strip()
    optional = "None" in annotation
    if optional and text == "auto":
        return None
    if annotation.startswith("tuple"):
        kind = annotation[len("tuple["):].split(",")[0].strip()
        items = [t.strip() for t in text.split(",") if t.strip()]
        if not items:
            raise ConfigError(f"{key}: empty list")
        return tuple(_scalar(key, kind, t) for t in items)
    kind = annotation.split("|")[0].strip()
    return _scalar(key, kind, text)


# -- validation ------------------------------------------------------------------

def _require(cond: bool, key: str, message: str):
    if not cond:
        raise ConfigError(f"{key}: {message}")


def _validate_common(cfg: ExperimentConfig):
    _require(cfg.d >= 1, "d", "must be a positive integer")
    _require(cfg.b_norm_sq >= 0, "b_norm_sq", "must be non-negative")
    _require(cfg.T > 0, "T", "must be positive")
    _require(0 <= cfg.seed < 2**64, "seed", "must be an unsigned 64-bit integer")
    _require(cfg.threads >= 1, "threads", "must be at least 1")
    _require(cfg.paths is None or cfg.paths >= 2, "paths", "need at least 2 paths")
    _require(cfg.steps is None or cfg.steps >= 1, "steps", "need at least 1 step")
    _require(cfg.cost_ceiling > 0, "cost_ceiling", "must be positive")


def _parse_lambda(token: str, k: int) -> float:
    token = token.strip()
    try:
        if token.endswith("k"):
            coef = token[:-1].strip()
            return (float(coef) if coef else 1.0) * k
        return float(token)
    except ValueError:
        raise ConfigError(f"lambdas: cannot read {token!r}") from None


# -- output ------------------------------------------------------------------------

def _target(out_dir: Path, name: str) -> Path:
    path = (out_dir / name).resolve()
    if path.parent != out_dir.resolve():
        raise ConfigError(f"out: refusing to write {name!r} outside {out_dir}")
    return path


def _cell(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    value = float(value)
    if not math.isfinite(value):
        return "n/a"
    return f"{value:.16e}"


def write_csv(cfg: ExperimentConfig, name: str, header: list[str], rows: list[list]) -> Path:
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = _target(out_dir, name)
    lines = [
        f"# experiment={cfg.experiment} config_sha256={cfg.digest()} seed={cfg.seed}",
        ",".join(header),
    ]
    lines += [",".join(_cell(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path) -> tuple[dict, list[dict]]:
    """Parse a file written by :func:`write_csv` back into ``(meta, rows)``;
    ``n/a`` cells become ``None``."""
    lines = Path(path).read_text().splitlines()
    meta = dict(item.split("=", 1) for item in lines[0].lstrip("# ").split())
    header = lines[1].split(",")
    rows = []
    for line in lines[2:]:
        row = {}
        for key, cell in zip(header, line.split(",")):
            if cell == "n/a":
                row[key] = None
            else:
                try:
                    row[key] = int(cell)
                except ValueError:
                    try:
                        row[key] = float(cell)
                    except ValueError:
                        row[key] = cell
        rows.append(row)
    return meta, rows


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(cfg: ExperimentConfig, name: str, payload: dict) -> Path:
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = _target(out_dir, name)
    body = {"experiment": cfg.experiment, "config_sha256": cfg.digest(), "seed": cfg.seed, **payload}
    path.write_text(json.dumps(_json_safe(body), indent=2, sort_keys=True) + "\n")
    return path


# -- commands ------------------------------------------------------------------

def cmd_series(cfg: ExperimentConfig) -> dict:
    """Origin values ``v^n(0,0)``, their gap to the solution and the bracketing
    envelopes, one row per ``n``."""
    _validate_common(cfg)
    _require(0.0 < cfg.eps < 1.0, "eps", "must lie in (0, 1)")
    ns = cfg.k_range(1, 20)
    _require(len(ns) >= 1 and ns.start >= 1, "k_min", "range must be non-empty and start at 1 or later")
    spec = cfg.example()
    v_inf = v_origin_series(spec, INF)
    rows = []
    for n in ns:
        gap = abs(origin_gap(spec, n))
        try:
            lo, hi = a21_sandwich(spec, n, cfg.eps)
        except ValueError:
            lo = hi = None
        try:
            a10 = a10_lower(spec, n)
        except ValueError:
            a10 = None
        rows.append([n, v_origin_series(spec, n), v_inf, gap, lo, hi, a10])
    header = ["n", "v_n", "v_inf", "gap_abs", "a21_lower", "a21_upper", "a10_lower"]
    path = write_csv(cfg, "series.csv", header, rows)
    return {"csv": path, "header": header, "rows": rows}


def _fit_both(errors: dict, expected: str, k_min: int) -> dict:
    fits = {mode: fit_rate(errors, mode, k_min=k_min) for mode in ("sqrt-factorial", "factorial")}
    r_sqrt, r_fact = fits["sqrt-factorial"].residual, fits["factorial"].residual
    winner = "sqrt-factorial" if r_sqrt < r_fact else "factorial"
    wrong = "factorial" if expected == "sqrt-factorial" else "sqrt-factorial"
    correct_res, wrong_res = fits[expected].residual, fits[wrong].residual
    ratio = wrong_res / correct_res if correct_res > 0 else math.inf
    return {
        "fits": {m: {"log_c": f.log_c, "c": math.exp(f.log_c), "residual": f.residual} for m, f in fits.items()},
        "winner": winner,
        "tie": abs(r_sqrt - r_fact) <= TIE_TOL,
        "expected": expected,
        "residual_ratio": ratio,
        "ratio_at_least_10": ratio >= 10.0,
    }


def _series_terms_count(spec: LinearExampleSpec, k: int) -> int:
    return sum(multi_index_count(spec.d, j) for j in range(k))


def _e_k_cost(spec: LinearExampleSpec, ks, paths: int, steps: int) -> float:
    # product terms evaluated per grid point, the solution counting as one
    terms = 1 + sum(_series_terms_count(spec, k) for k in ks)
    return float(paths) * (steps + 1) * terms


def cmd_phase_transition(cfg: ExperimentConfig) -> dict:
    """Rate fits for a z-dependent series (exact origin gaps and Monte-Carlo
    ``e_k``) and the z-independent ODE series, in both fit modes."""
    _validate_common(cfg)
    ks = cfg.k_range(4, 20)
    _require(len(ks) >= 3, "k_max", f"need at least 3 values of k, got {len(ks)}")
    _require(ks.start >= 1, "k_min", "must be at least 1")
    spec = cfg.example()
    paths = 1000 if cfg.paths is None else cfg.paths
    steps = 64 if cfg.steps is None else cfg.steps
    cost = _e_k_cost(spec, ks, paths, steps)
    if cost > cfg.cost_ceiling:
        raise BudgetExceeded(cost, cfg.cost_ceiling)

    gap = {k: abs(origin_gap(spec, k)) for k in ks}
    ode = {k: l01_error(cfg.T, k) for k in ks}
    ek = estimate_error_series(spec, list(ks), steps, paths, cfg.seed, cfg.threads)
    rows = [
        [k, gap[k], ek[k].estimate, ek[k].half_width, ode[k][0], ode[k][1]]
        for k in ks
    ]
    header = ["k", "gap_abs", "e_k", "e_k_half_width", "ode_exact", "ode_lower"]
    csv_path = write_csv(cfg, "phase_transition.csv", header, rows)

    summary = {"k_min": ks.start, "k_max": ks.stop - 1, "paths": paths, "steps": steps, "series": {}}
    if any(v > 0 for v in gap.values()):
        summary["series"]["gap"] = _fit_both(gap, "sqrt-factorial", ks.start)
    if any(e.estimate > 0 for e in ek.entries):
        summary["series"]["e_k"] = _fit_both(ek.as_mapping(), "sqrt-factorial", ks.start)
    summary["series"]["ode"] = _fit_both({k: v[0] for k, v in ode.items()}, "factorial", ks.start)
    json_path = write_json(cfg, "phase_transition.json", summary)
    return {"csv": csv_path, "json": json_path, "header": header, "rows": rows, "summary": summary}


def _a10_formula(beta: float, k: int) -> float:
    # log of (1/2)(beta/4)^floor((k+1)/2)/sqrt(k!), evaluated with or without its precondition
    if beta == 0:
        return -math.inf
    j = (k + 1) // 2
    return math.log(0.5) + j * math.log(beta / 4.0) - 0.5 * log_factorial(k)


def cmd_dimension_sweep(cfg: ExperimentConfig) -> dict:
    """Envelopes at fixed ``k`` for the example with ``L_z = m**scale_alpha``
    and ``|b|**2 = L_z**2 T`` (``T = 1``), over the dimensions ``dims``."""
    _validate_common(cfg)
    _require(all(m >= 1 for m in cfg.dims), "dims", "dimensions must be positive")
    ks = cfg.ks if cfg.ks is not None else (6,)
    _require(all(k >= 1 for k in ks), "ks", "k must be positive")
    rows = []
    for m in cfg.dims:
        L_z = float(m) ** cfg.scale_alpha
        beta = L_z**2
        # normalized moments so that only the Lipschitz scaling varies with m
        problem = BsdeProblem(T=1.0, d=1, m=m, L_y=0.0, L_z=L_z, xi_second_moment=1.0)
        for k in ks:
            log_a10 = _a10_formula(beta, k)
            rows.append([m, k, L_z, beta, r01_bound(problem, k), log_a10, math.exp(log_a10), k >= beta - 1.0])
    header = ["m", "k", "L_z", "b_norm_sq", "log_r01", "log_a10_lower", "a10_lower", "a10_admissible"]
    path = write_csv(cfg, "dimension_sweep.csv", header, rows)
    return {"csv": path, "header": header, "rows": rows}


def cmd_apriori(cfg: ExperimentConfig) -> dict:
    """Monte-Carlo check of the weighted a priori inequalities over a sweep."""
    _validate_common(cfg)
    ks = cfg.ks if cfg.ks is not None else (1, 2, 3)
    _require(all(k >= 1 for k in ks), "ks", "k must be at least 1")
    _require(0.0 <= cfg.s < 1.0, "s", "must lie in [0, 1)")
    _require(all(v in ("i", "ii", "iii") for v in cfg.variants), "variants", "allowed values are i, ii, iii")
    _require(all(a > 0 for a in cfg.alphas), "alphas", "alpha must be positive")
    for k in ks:
        for token in cfg.lambdas:
            _require(_parse_lambda(token, k) > 0, "lambdas", f"lambda {token!r} is not positive for k={k}")
    paths = 10_000 if cfg.paths is None else cfg.paths
    steps = 128 if cfg.steps is None else cfg.steps
    spec = cfg.example()
    checks = len(cfg.lambdas) * sum(len(cfg.alphas) if v == "iii" else 1 for v in cfg.variants)
    cost = checks * sum(_e_k_cost(spec, [k, k - 1], paths, steps) for k in ks)
    if cost > cfg.cost_ceiling:
        raise BudgetExceeded(cost, cfg.cost_ceiling)

    entries = []
    for k in ks:
        # "1" and "k" coincide at k = 1; keep the first occurrence
        lams = list(dict.fromkeys(_parse_lambda(token, k) for token in cfg.lambdas))
        for lam in lams:
            for variant in cfg.variants:
                for alpha in cfg.alphas if variant == "iii" else (None,):
                    rep = apriori_check(spec, k, lam, variant, cfg.s, alpha, paths, steps, cfg.seed, cfg.threads)
                    entries.append(dataclasses.asdict(rep))
    payload = {
        "paths": paths,
        "steps": steps,
        "b_norm_sq": cfg.b_norm_sq,
        "entries": entries,
        "all_passed": all(e["passed"] for e in entries),
    }
    path = write_json(cfg, "apriori.json", payload)
    return {"json": path, "report": payload}


def _deviation(est: float, oracle: float, se: float) -> float:
    if se > 0 and math.isfinite(se):
        return abs(est - oracle) / se
    return 0.0 if est == oracle else math.inf


def _picard_setup(cfg: ExperimentConfig):
    spec = cfg.example()
    if cfg.driver == "linear-z":
        problem = linear_z_problem(spec)

        def oracle(n):
            ev = IterateEvaluator(spec, n)
            origin = np.zeros(spec.d)
            return float(eval_v(ev, 0.0, origin)), np.asarray(eval_grad_v(ev, 0.0, origin)).reshape(-1)

    elif cfg.driver == "linear-y":
        problem = linear_y_problem(cfg.L_y, cfg.T, 1)

        def oracle(n):
            return linear_y_iterate(cfg.L_y, cfg.T, n, 0.0), np.zeros(1)

    else:
        problem = zero_driver_problem(spec)

        def oracle(n):
            if n == 0:
                return 0.0, np.zeros(spec.d)
            ev = IterateEvaluator(spec, 1)
            origin = np.zeros(spec.d)
            return float(eval_v(ev, 0.0, origin)), np.asarray(eval_grad_v(ev, 0.0, origin)).reshape(-1)

    return problem, oracle


def cmd_picard_mc(cfg: ExperimentConfig) -> dict:
    """Nested Monte-Carlo Picard iterates at ``(0, 0)`` against closed-form
    oracles, with deviations in standard errors."""
    _validate_common(cfg)
    _require(cfg.driver in DRIVERS, "driver", f"must be one of {', '.join(DRIVERS)}")
    _require(cfg.repetitions >= 1, "repetitions", "must be at least 1")
    _require(all(b >= 1 for b in cfg.budget), "budget", "per-level sample counts must be positive")
    ns = cfg.k_range(0, 3)
    _require(len(ns) >= 1 and ns.start >= 0, "k_min", "range must be non-empty and start at 0 or later")
    n_max = ns.stop - 1
    budget = list(cfg.budget) * n_max if len(cfg.budget) == 1 else list(cfg.budget)
    _require(len(budget) >= n_max, "budget", f"need {n_max} per-level counts, got {len(budget)}")
    total = cfg.repetitions * sum(nested_cost(n, budget) for n in ns)
    if total > cfg.cost_ceiling:
        raise BudgetExceeded(total, cfg.cost_ceiling)

    problem, oracle = _picard_setup(cfg)
    m = problem.m
    origin = np.zeros(m)
    rows = []
    rep_ok = []
    for rep in range(cfg.repetitions):
        seed = cfg.seed + rep
        ok = True
        for n in ns:
            res = nested_picard(problem, n, 0.0, origin, budget, seed, cfg.threads, cost_ceiling=None)
            y_or, z_or = oracle(n)
            y_dev = _deviation(float(res.y[0]), y_or, float(res.y_stderr[0]))
            z = res.z.reshape(-1)
            z_se = res.z_stderr.reshape(-1)
            z_dev = [_deviation(float(z[i]), float(z_or[i]), float(z_se[i])) for i in range(m)]
            ok = ok and y_dev <= 4.0 and all(dv <= 4.0 for dv in z_dev)
            row = [rep, seed, n, res.y[0], res.y_stderr[0], y_or, y_dev]
            for i in range(m):
                row += [z[i], z_se[i], z_or[i], z_dev[i]]
            row += [res.truncation_bias, res.cost]
            rows.append(row)
        rep_ok.append(ok)
    header = ["rep", "seed", "n", "y", "y_stderr", "y_oracle", "y_dev_sigma"]
    for i in range(1, m + 1):
        header += [f"z{i}", f"z{i}_stderr", f"z{i}_oracle", f"z{i}_dev_sigma"]
    header += ["truncation_bias", "cost"]
    csv_path = write_csv(cfg, "picard_mc.csv", header, rows)
    summary = {
        "driver": cfg.driver,
        "budget": budget[:n_max],
        "repetitions": cfg.repetitions,
        "repetitions_within_4sigma": int(sum(rep_ok)),
    }
    json_path = write_json(cfg, "picard_mc.json", summary)
    return {"csv": csv_path, "json": json_path, "header": header, "rows": rows, "summary": summary}


COMMAND_TABLE = {
    "series": cmd_series,
    "phase-transition": cmd_phase_transition,
    "dimension-sweep": cmd_dimension_sweep,
    "apriori": cmd_apriori,
    "picard-mc": cmd_picard_mc,
}


def run(command: str, cfg: ExperimentConfig) -> dict:
    if command not in COMMAND_TABLE:
        raise ConfigError(f"experiment: unknown command {command!r}")
    return COMMAND_TABLE[command](dataclasses.replace(cfg, experiment=command))
