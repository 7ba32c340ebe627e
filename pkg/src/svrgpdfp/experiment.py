"""Config-driven experiments: build a problem, cache its reference, run solvers over seeds.

A config is one JSON object::

    {
      "version": 1,
      "problem": {"type": "synthetic_logistic", "n": 2000, "d": 20, ...},
      "solvers": [{"name": "svrg", "variant": "svrg-sc", "gamma": "1/L_max",
                   "batch": 10, "m": 200}],
      "repetitions": 10,
      "reference_iters": 10000,
      "stop": {"max_epochs": 100, "rel_err_threshold": 1e-4},
      "seed": 0,
      "output_dir": "out"
    }

Step sizes may be numbers, ``"auto"`` or ``"<c>/L_f"``, ``"<c>/L_max"`` (primal)
and ``"<c>/rho"`` (dual, ``rho`` the bound on ``rho_max(BB^T)``).
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    gen_graph_matrix,
    gen_imaging_problem,
    gen_synthetic_logistic,
    graph_guided_problem,
    read_libsvm,
    split_train_test,
    write_pgm,
)
from .linops import Identity, rho_max_bound
from .metrics import Evaluator, ReferenceSolution, compute_reference
from .objective import LeastSquares, Logistic
from .prox import L1
from .solvers import (
    VARIANTS,
    DivergenceError,
    ParameterError,
    ProblemSpec,
    SolverParams,
    StopRule,
    solve,
    suggest_params,
    validate_params,
)
from .trace import CSV_COLUMNS, RunTrace, TraceRow

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "BuiltProblem",
    "load_config",
    "parse_config",
    "build_problem",
    "load_or_compute_reference",
    "resolve_params",
    "validate_config",
    "run_experiment",
    "average_traces",
    "epochs_to_threshold",
    "EXIT_OK",
    "EXIT_INVALID",
    "EXIT_DIVERGED",
]

CONFIG_VERSION = 1
EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 2, 3

_TOP_KEYS = {"version", "problem", "solvers", "repetitions", "reference_iters", "stop", "seed",
             "output_dir", "record_time"}
_STOP_KEYS = {"max_epochs", "rel_err_threshold"}
_SOLVER_KEYS = {"name", "variant", "gamma", "lam", "m", "batch", "stages", "iters", "decay",
                "shuffle", "override"}
_GRAPH_KEYS = {"graph", "graph_p", "graph_seed", "ridge", "weight", "huber_alpha", "split",
               "split_seed"}
_PROBLEM_KEYS = {
    "lasso_toy": {"type"},
    "synthetic_logistic": {"type", "n", "d", "separation", "noise", "seed", "anisotropy",
                           "normalize"} | _GRAPH_KEYS,
    "libsvm": {"type", "path", "dim"} | _GRAPH_KEYS,
    "imaging": {"type", "size", "rays_per_angle", "angles", "noise_variance", "nu", "seed",
                "views_per_block"},
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    problem: dict
    solvers: list[dict]
    repetitions: int = 1
    reference_iters: int = 10000
    stop: StopRule = field(default_factory=StopRule)
    seed: int = 0
    output_dir: Path = Path("out")
    record_time: bool = False
    base_dir: Path = Path(".")


def _reject_unknown(obj: dict, allowed: set, where: str):
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(extra)}")


def _int(value, where, minimum):
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"{where} must be an integer >= {minimum}")
    return value


def parse_config(raw: dict, base_dir=".") -> ExperimentConfig:
    """Structural validation; raises :class:`ConfigError` on the first problem."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _reject_unknown(raw, _TOP_KEYS, "config")
    if raw.get("version") != CONFIG_VERSION:
        raise ConfigError(f"config version must be {CONFIG_VERSION}")
    problem = raw.get("problem")
    if not isinstance(problem, dict) or problem.get("type") not in _PROBLEM_KEYS:
        raise ConfigError(f"problem.type must be one of {sorted(_PROBLEM_KEYS)}")
    _reject_unknown(problem, _PROBLEM_KEYS[problem["type"]], "problem")
    if problem["type"] == "libsvm" and "path" not in problem:
        raise ConfigError("libsvm problem needs a path")
    solvers = raw.get("solvers")
    if not isinstance(solvers, list) or not solvers:
        raise ConfigError("at least one solver is required")
    names = set()
    for k, s in enumerate(solvers):
        if not isinstance(s, dict):
            raise ConfigError(f"solvers[{k}] must be an object")
        _reject_unknown(s, _SOLVER_KEYS, f"solvers[{k}]")
        if s.get("variant") not in VARIANTS:
            raise ConfigError(f"solvers[{k}].variant must be one of {VARIANTS}")
        name = s.get("name", s["variant"])
        if not re.fullmatch(r"[A-Za-z0-9_.-]+", str(name)):
            raise ConfigError(f"solvers[{k}].name {name!r} is not a safe file name")
        if name in names:
            raise ConfigError(f"duplicate solver name {name!r}")
        names.add(name)
    stop_raw = raw.get("stop", {})
    if not isinstance(stop_raw, dict):
        raise ConfigError("stop must be an object")
    _reject_unknown(stop_raw, _STOP_KEYS, "stop")
    stop = StopRule(stop_raw.get("max_epochs"), stop_raw.get("rel_err_threshold"))
    base_dir = Path(base_dir)
    out = Path(raw.get("output_dir", "out"))
    return ExperimentConfig(
        problem=copy.deepcopy(problem),
        solvers=copy.deepcopy(solvers),
        repetitions=_int(raw.get("repetitions", 1), "repetitions", 1),
        reference_iters=_int(raw.get("reference_iters", 10000), "reference_iters", 0),
        stop=stop,
        seed=_int(raw.get("seed", 0), "seed", 0),
        output_dir=out if out.is_absolute() else base_dir / out,
        record_time=bool(raw.get("record_time", False)),
        base_dir=base_dir,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(raw, path.parent)


@dataclass
class BuiltProblem:
    spec: ProblemSpec
    truth: np.ndarray | None = None
    f_test: Logistic | None = None
    image_shape: tuple[int, int] | None = None


def _graph_problem(ds, p: dict) -> BuiltProblem:
    f_test = None
    if p.get("split", False):
        ds, test = split_train_test(ds, p.get("split_seed", 0))
        f_test = Logistic(test.to_dense(), test.labels) if test.n else None
    G = gen_graph_matrix(ds.d, p.get("graph", "chain"), p.get("graph_p", 0.1),
                         p.get("graph_seed", 0))
    spec = graph_guided_problem(ds, G, p.get("ridge", 1e-4), p.get("weight", 1e-4),
                                p.get("huber_alpha"))
    return BuiltProblem(spec, f_test=f_test)


def build_problem(cfg: ExperimentConfig) -> BuiltProblem:
    p = cfg.problem
    kind = p["type"]
    try:
        if kind == "lasso_toy":
            # f(x) = (x - 2)^2 / 2, g = |.|, B = I; solution x* = 1, v* = 1
            return BuiltProblem(ProblemSpec(LeastSquares([[1.0]], [2.0]), L1(1, 1.0), Identity(1)))
        if kind == "synthetic_logistic":
            ds = gen_synthetic_logistic(p.get("n", 200), p.get("d", 10), p.get("separation", 1.0),
                                        p.get("noise", 0.0), p.get("seed", 0),
                                        p.get("anisotropy", 1.0), p.get("normalize", False))
            return _graph_problem(ds, p)
        if kind == "libsvm":
            path = Path(p["path"])
            ds = read_libsvm(path if path.is_absolute() else cfg.base_dir / path, p.get("dim"))
            return _graph_problem(ds, p)
        img = gen_imaging_problem(p.get("size", 32), p.get("rays_per_angle", 48),
                                  p.get("angles", 48), p.get("noise_variance", 0.01),
                                  p.get("nu"), p.get("seed", 0), p.get("views_per_block", 1))
        return BuiltProblem(img.to_problem(), truth=img.truth,
                            image_shape=(img.height, img.width))
    except (TypeError, ValueError, OSError) as exc:
        raise ConfigError(f"cannot build {kind} problem: {exc}") from exc


_RULE = re.compile(r"^\s*([0-9.eE+-]*)\s*/\s*(L_f|L_max|rho)\s*$")


def _step(value, problem: ProblemSpec, allowed: tuple, default):
    if value is None or value == "auto":
        return default()
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    m = _RULE.match(str(value))
    if not m or m.group(2) not in allowed:
        raise ConfigError(f"bad step rule {value!r}; expected a number or c/{'|'.join(allowed)}")
    c = float(m.group(1) or 1.0)
    if m.group(2) == "L_f":
        return c / problem.f.smoothness()
    if m.group(2) == "L_max":
        return c / problem.f.l_max
    return c * rho_max_bound(problem.B).step_limit


def resolve_params(entry: dict, problem: ProblemSpec, stop: StopRule, seed: int = 0) -> SolverParams:
    """Turn a solver entry into :class:`SolverParams`.

    Omitted loop counts are sized to fit ``stop.max_epochs`` (default 100 epochs)
    without exceeding it; omitted steps come from :func:`suggest_params`.
    """
    f = problem.f
    variant = entry["variant"]
    b = entry.get("batch")
    n_b = f.n if b is None else b
    if isinstance(n_b, bool) or not isinstance(n_b, int) or not 1 <= n_b <= f.n or f.n % n_b:
        raise ConfigError(f"batch size must divide n (n={f.n}, b={n_b})")

    def gamma_default():
        return suggest_params(problem, variant, batch=b).gamma

    gamma = _step(entry.get("gamma"), problem, ("L_f", "L_max"), gamma_default)
    lam = _step(entry.get("lam"), problem, ("rho",),
                lambda: min(1.0, rho_max_bound(problem.B).step_limit))
    m = entry.get("m", max(1, 2 * f.n // n_b))
    budget = stop.max_epochs if stop.max_epochs is not None else 100.0
    stage_cost = (f.n + m * n_b) / f.n
    iters = entry.get("iters")
    if iters is None:
        iters = max(1, math.floor(budget * (f.n // n_b if variant == "spdfp" else 1) + 1e-9))
    stages = entry.get("stages", max(1, math.floor(budget / stage_cost + 1e-9)))
    try:
        return SolverParams(variant=variant, gamma=gamma, lam=lam, m=m, batch=b, stages=stages,
                            iters=iters, decay=entry.get("decay", 0.5), seed=seed,
                            shuffle=bool(entry.get("shuffle", False)),
                            override=bool(entry.get("override", False)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"solver {entry.get('name', variant)!r}: {exc}") from None


def _config_hash(cfg: ExperimentConfig) -> str:
    key = json.dumps({"problem": cfg.problem, "reference_iters": cfg.reference_iters},
                     sort_keys=True)
    return hashlib.sha256(key.encode()).hexdigest()[:16]


def reference_path(cfg: ExperimentConfig) -> Path:
    return cfg.output_dir / f"reference-{_config_hash(cfg)}.npz"


def load_or_compute_reference(cfg: ExperimentConfig, problem: ProblemSpec,
                              cache: bool = True) -> ReferenceSolution | None:
    """Reference point from the cache in ``output_dir``, computing it when absent."""
    if cfg.reference_iters == 0:
        return None
    path = reference_path(cfg)
    if cache and path.exists():
        z = np.load(path)
        return ReferenceSolution(
            x=z["x"], v=z["v"], objective=float(z["objective"]), grad=z["grad"], Bx=z["Bx"],
            residual=float(z["residual"]), half_residual=float(z["half_residual"]),
            iters=int(z["iters"]),
        )
    ref = compute_reference(problem, cfg.reference_iters)
    if cache:
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp.npz")
        np.savez(tmp, x=ref.x, v=ref.v, objective=ref.objective, grad=ref.grad, Bx=ref.Bx,
                 residual=ref.residual, half_residual=ref.half_residual, iters=ref.iters)
        os.replace(tmp, path)
    return ref


def validate_config(cfg: ExperimentConfig, built: BuiltProblem | None = None) -> dict:
    """Per-solver validation reports (``kappa``, ``M``, reasons) keyed by solver name."""
    built = built or build_problem(cfg)
    out = {}
    for entry in cfg.solvers:
        name = entry.get("name", entry["variant"])
        try:
            params = resolve_params(entry, built.spec, cfg.stop, cfg.seed)
        except ConfigError as exc:
            out[name] = {"ok": False, "reasons": [str(exc)], "warnings": [], "kappa": None,
                         "M": None, "override": bool(entry.get("override", False))}
            continue
        rep = validate_params(built.spec, params).as_dict()
        rep["override"] = params.override
        rep["gamma"] = params.gamma
        rep["lam"] = params.lam
        out[name] = rep
    return out


def _usable(rep: dict) -> bool:
    return rep["ok"] or (rep["override"] and rep.get("M") is not None)


def epochs_to_threshold(trace_rows: list[TraceRow], threshold: float) -> float | None:
    for row in trace_rows:
        if row.rel_err is not None and row.rel_err <= threshold:
            return row.epochs
    return None


def average_traces(runs: list[list[TraceRow]]) -> tuple[list[TraceRow], dict]:
    """Per-row mean across repetitions, truncated to the shortest run; stddevs returned apart."""
    if not runs:
        return [], {}
    length = min(len(r) for r in runs)
    mean_rows, std = [], {c: [] for c in CSV_COLUMNS[1:]}
    for k in range(length):
        rows = [r[k] for r in runs]
        vals = {}
        for c in CSV_COLUMNS[1:]:
            col = [getattr(r, c) for r in rows]
            if any(v is None for v in col):
                vals[c] = None
                std[c].append(None)
            else:
                arr = np.array(col, dtype=float)
                vals[c] = float(arr[0]) if len(arr) == 1 else float(arr.mean())
                std[c].append(float(arr.std()))
        mean_rows.append(TraceRow(stage=rows[0].stage, **vals))
    return mean_rows, std


def _write_rows(path: Path, rows: list[TraceRow]):
    RunTrace("", rows).write_csv(path)


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def _threads() -> int:
    raw = os.environ.get("THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass
class ExperimentResult:
    exit_code: int
    summary: dict
    traces: dict[str, list[RunTrace]]


def run_experiment(cfg: ExperimentConfig, threads: int | None = None) -> ExperimentResult:
    """Run every solver for every repetition and write CSVs plus ``summary.json``.

    Solvers that fail validation (without ``override``) are skipped and reported;
    the exit code is 3 if any run diverged, else 2 if any solver was rejected.
    """
    built = build_problem(cfg)
    problem = built.spec
    reports = validate_config(cfg, built)
    ref = load_or_compute_reference(cfg, problem)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    threads = _threads() if threads is None else max(1, threads)
    psnr_peak = None if built.truth is None else float(np.max(built.truth))

    jobs = []
    for entry in cfg.solvers:
        name = entry.get("name", entry["variant"])
        if not _usable(reports[name]):
            continue
        for r in range(cfg.repetitions):
            jobs.append((name, r, resolve_params(entry, problem, cfg.stop, cfg.seed + r)))

    def work(job):
        name, r, params = job
        ev = Evaluator(problem, ref, built.truth, built.f_test, psnr_peak)
        try:
            tr = solve(problem, params, evaluate=ev, stop=cfg.stop, record_time=cfg.record_time)
        except DivergenceError as exc:
            return name, r, None, str(exc), ev.clamped
        except ParameterError as exc:
            return name, r, None, f"invalid parameters: {exc}", ev.clamped
        return name, r, tr, None, ev.clamped

    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(work, jobs))

    summary = {"problem": cfg.problem, "reference": None, "solvers": {}}
    if ref is not None:
        summary["reference"] = {"objective": ref.objective, "residual": ref.residual,
                                "converged": ref.converged, "iters": ref.iters}
    traces: dict[str, list[RunTrace]] = {}
    diverged = rejected = False
    for entry in cfg.solvers:
        name = entry.get("name", entry["variant"])
        info = {"validation": reports[name]}
        summary["solvers"][name] = info
        if not _usable(reports[name]):
            info["status"] = "rejected"
            rejected = True
            continue
        mine = sorted((res for res in results if res[0] == name), key=lambda res: res[1])
        errors = [f"repetition {r}: {err}" for _, r, tr, err, _ in mine if err]
        runs = [tr for _, _, tr, err, _ in mine if tr is not None]
        if errors:
            diverged = True
            info["errors"] = errors
        info["status"] = "diverged" if errors else "ok"
        info["clamped_rel_err"] = sum(res[4] for res in mine)
        traces[name] = runs
        for _, r, tr, _, _ in mine:
            if tr is not None:
                tr.write_csv(cfg.output_dir / f"{name}_run{r}.csv")
        if not runs:
            continue
        mean_rows, std = average_traces([t.rows for t in runs])
        _write_rows(cfg.output_dir / f"{name}_mean.csv", mean_rows)
        lengths = [len(t.rows) for t in runs]
        info["rows"] = len(mean_rows)
        if len(set(lengths)) > 1:
            info["truncated"] = f"runs had {min(lengths)}..{max(lengths)} rows; averaged over the first {min(lengths)}"
        info["stddev"] = {k: v for k, v in std.items()
                          if k != "epochs" and any(x is not None for x in v)}
        if cfg.stop.rel_err_threshold is not None:
            hits = [epochs_to_threshold(t.rows, cfg.stop.rel_err_threshold) for t in runs]
            info["epochs_to_threshold"] = {
                "per_run": hits,
                "reached": sum(h is not None for h in hits),
                "mean": float(np.mean(hits)) if all(h is not None for h in hits) else None,
            }
        if built.image_shape is not None:
            write_pgm(cfg.output_dir / f"{name}_run0.pgm", runs[0].x.reshape(built.image_shape),
                      0.0, psnr_peak)
    with open(cfg.output_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(_json_safe(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    code = EXIT_DIVERGED if diverged else EXIT_INVALID if rejected else EXIT_OK
    return ExperimentResult(code, summary, traces)

