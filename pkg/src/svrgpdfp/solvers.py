"""Primal-dual fixed point solvers for ``min_x f(x) + g(Bx)``.

Four variants share one update kernel (:func:`pdfp_step`):

``pdfp``      deterministic, full gradient every iteration
``spdfp``     plain mini-batch gradient with step ``gamma / k**decay``
``svrg-sc``   variance-reduced, stage averages restart the inner loop
``svrg-gc``   variance-reduced, last inner iterate restarts the inner loop,
              output is the ergodic mean of the stage averages
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .linops import Dense, Identity, LinearMap, rho_max_bound
from .objective import BatchScheme, FiniteSum, make_anchor, svrg_grad, variance_constants
from .prox import ProxFn
from .trace import RunTrace, TraceRow

__all__ = [
    "ProblemSpec",
    "SolverParams",
    "StopRule",
    "ValidationReport",
    "ParameterError",
    "DivergenceError",
    "VARIANTS",
    "pdfp_step",
    "run_pdfp",
    "run_spdfp",
    "run_svrg_pdfp_sc",
    "run_svrg_pdfp_gc",
    "solve",
    "validate_params",
    "contraction_factor",
    "suggest_params",
    "spdfp_step_size",
]

VARIANTS = ("pdfp", "spdfp", "svrg-sc", "svrg-gc")

DIVERGENCE_FACTOR = 1e3
DIVERGENCE_PATIENCE = 10


class ParameterError(ValueError):
    def __init__(self, report):
        super().__init__("; ".join(report.reasons) or "invalid parameters")
        self.report = report


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProblemSpec:
    f: FiniteSum
    g: ProxFn
    B: LinearMap

    def __post_init__(self):
        if self.B.in_dim != self.f.d:
            raise ValueError(f"B.in_dim={self.B.in_dim} does not match f.d={self.f.d}")
        if self.B.out_dim != self.g.dimension:
            raise ValueError(
                f"B.out_dim={self.B.out_dim} does not match g.dimension={self.g.dimension}"
            )

    def objective(self, x) -> float:
        return self.f.value(x) + self.g.value(self.B.apply(x))


@dataclass(frozen=True)
class SolverParams:
    """Step sizes and loop lengths.

    ``gamma`` is the primal step (the initial step for ``spdfp``), ``lam`` the
    dual step, ``m`` the inner-loop length and ``stages`` the number of outer
    stages of the SVRG variants; ``iters`` counts iterations of ``pdfp`` and
    ``spdfp``. ``batch=None`` means the full sample set.
    """

    variant: str
    gamma: float
    lam: float
    m: int = 1
    batch: int | None = None
    stages: int = 1
    iters: int = 1
    decay: float = 0.5
    seed: int = 0
    shuffle: bool = False
    override: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not self.gamma > 0 or not self.lam > 0:
            raise ValueError("gamma and lam must be positive")
        if self.m < 1 or self.stages < 1 or self.iters < 1:
            raise ValueError("m, stages and iters must be >= 1")
        if self.variant == "spdfp" and not 0 <= self.decay <= 1:
            raise ValueError("decay exponent must lie in [0, 1]")

    def batch_size(self, n: int) -> int:
        return n if self.batch is None else int(self.batch)


@dataclass(frozen=True)
class StopRule:
    max_epochs: float | None = None
    rel_err_threshold: float | None = None


@dataclass
class ValidationReport:
    ok: bool
    reasons: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    kappa: float | None = None
    M: float = 0.0
    c_b: float = 0.0
    l_max: float = 0.0
    beta_hat: float = 0.0
    gamma_max: float = 0.0
    lambda_max: float = np.inf
    rho_max: float = 0.0

    def as_dict(self):
        return {
            "ok": self.ok,
            "reasons": list(self.reasons),
            "warnings": list(self.warnings),
            "kappa": self.kappa,
            "M": self.M,
            "C_b": self.c_b,
            "L_max": self.l_max,
            "beta_hat": self.beta_hat,
            "gamma_max": self.gamma_max,
            "lambda_max": None if np.isinf(self.lambda_max) else self.lambda_max,
            "rho_max": self.rho_max,
        }


def _rows_orthonormal(B: LinearMap) -> bool:
    if isinstance(B, Identity):
        return True
    if isinstance(B, Dense) and B.out_dim <= 2000:
        G = B.matrix @ B.matrix.T
        return bool(np.allclose(G, np.eye(B.out_dim), atol=1e-12))
    return False


def contraction_factor(mu_f, gamma, M, m, lam=None, mu_g=None, rho_min=0.0) -> float:
    """Per-stage contraction ``kappa`` of the strongly convex SVRG variant.

    Pass ``lam=None`` when ``B B^T = I``: the dual term then drops out.
    """
    denom = (1.0 - gamma * M) * m
    kappa = 1.0 / (mu_f * gamma * denom) + (m + 1) * gamma * M / denom
    if lam is not None:
        kappa += gamma * (1.0 - rho_min) / (lam * mu_g * denom)
    return kappa


def validate_params(
    problem: ProblemSpec,
    params: SolverParams,
    rho_min: float = 0.0,
) -> ValidationReport:
    """Check step sizes against the convergence conditions and compute ``kappa``.

    ``rho_min`` is the smallest eigenvalue of ``B B^T``; the default 0 is
    always safe (it can only enlarge ``kappa``). ``rho_max`` is exact for maps
    that know it and a power-iteration bound otherwise.
    """
    f, g, B = problem.f, problem.g, problem.B
    rep = ValidationReport(ok=True)
    n = f.n
    b = params.batch_size(n)

    if b < 1 or b > n or n % b:
        rep.reasons.append(f"batch size must divide n (n={n}, b={b})")
    rep.l_max = f.l_max
    rep.beta_hat = 1.0 / rep.l_max
    if n >= 2 and not rep.reasons:
        vc = variance_constants(f, BatchScheme.build(n, b))
        rep.c_b, rep.M = vc.c_b, vc.M

    sb = rho_max_bound(B)
    rep.rho_max = sb.value
    rep.lambda_max = sb.step_limit
    if params.lam > rep.lambda_max * (1.0 + 1e-12):
        rep.reasons.append(
            f"dual step lam={params.lam:.6g} exceeds 1/rho_max(BB^T)={rep.lambda_max:.6g}"
        )

    if params.variant in ("pdfp", "spdfp"):
        # full-gradient fixed point iteration converges for gamma < 2/L_f
        rep.gamma_max = 2.0 / f.smoothness()
        if params.gamma >= rep.gamma_max:
            rep.reasons.append(
                f"primal step gamma={params.gamma:.6g} must be below 2/L_f={rep.gamma_max:.6g}"
            )
    else:
        factor = 1.0 if params.variant == "svrg-sc" else 2.0
        cap = np.inf if rep.M == 0 else 1.0 / (factor * rep.M)
        rep.gamma_max = min(rep.beta_hat, cap)
        if params.gamma > rep.gamma_max:
            which = "1/M" if params.variant == "svrg-sc" else "1/(2M)"
            rep.reasons.append(
                f"primal step gamma={params.gamma:.6g} exceeds min(1/L_max, {which})={rep.gamma_max:.6g}"
            )

    if params.variant == "svrg-sc":
        mu_f = f.strong_convexity
        mu_g = g.conj_strong_convexity
        orthonormal = _rows_orthonormal(B)
        gm = params.gamma * rep.M
        if mu_f <= 0:
            rep.warnings.append("f is not known to be strongly convex; no linear rate certified")
        elif mu_g <= 0 and not orthonormal:
            rep.warnings.append(
                f"g* of {g.kind} is not strongly convex; use a Huber smoothing of the "
                "L1 norm to obtain a certified linear rate"
            )
        elif gm >= 1:
            rep.warnings.append("gamma*M >= 1; rate constant undefined")
        else:
            kappa = contraction_factor(
                mu_f, params.gamma, rep.M, params.m,
                lam=None if orthonormal else params.lam, mu_g=mu_g, rho_min=rho_min,
            )
            rep.kappa = kappa
            if kappa >= 1:
                rep.warnings.append(f"kappa={kappa:.6g} >= 1; increase m or decrease gamma")

    rep.ok = not rep.reasons
    return rep


def suggest_params(problem: ProblemSpec, variant: str, batch: int | None = None, **overrides) -> SolverParams:
    """Admissible defaults: ``lam = 1/rho_max`` and a step inside the validated range."""
    f = problem.f
    n = f.n
    b = n if batch is None else batch
    lam = min(1.0, rho_max_bound(problem.B).step_limit)
    if variant in ("pdfp", "spdfp"):
        gamma = 1.0 / f.smoothness()
        kw = dict(iters=100)
    else:
        M = variance_constants(f, BatchScheme.build(n, b)).M if n >= 2 else 0.0
        cap = np.inf if M == 0 else 1.0 / (4.0 * M)
        gamma = min(1.0 / f.l_max, cap)
        kw = dict(m=max(1, 2 * n // b), stages=10)
    kw.update(overrides)
    return SolverParams(variant=variant, gamma=kw.pop("gamma", gamma), lam=kw.pop("lam", lam),
                        batch=batch, **kw)


def pdfp_step(problem: ProblemSpec, gamma: float, lam: float, x, v, grad):
    """One fixed-point update with the supplied gradient estimate.

    Returns ``(x_next, v_next, y_next)``.
    """
    B, g = problem.B, problem.g
    base = x - gamma * grad
    y = base - gamma * B.adjoint_apply(v)
    tau = lam / gamma
    v_next = g.conj_prox(tau * B.apply(y) + v, tau)
    x_next = base - gamma * B.adjoint_apply(v_next)
    return x_next, v_next, y


Evaluator = Callable[[np.ndarray, np.ndarray], dict]


class _Recorder:
    def __init__(self, problem, name, evaluate, stop, record_time):
        self.problem = problem
        self.trace = RunTrace(name)
        self.evaluate = evaluate
        self.stop = stop or StopRule()
        self.record_time = record_time
        self.t0 = time.perf_counter()
        self.f0 = None
        self.strikes = 0

    def record(self, stage, epochs, x, v) -> bool:
        """Append a row; return True when the stop rule fires."""
        metrics = dict(self.evaluate(x, v)) if self.evaluate else {}
        if metrics.get("objective") is None:
            metrics["objective"] = self.problem.objective(x)
        obj = metrics["objective"]
        if not np.isfinite(obj) or not np.all(np.isfinite(x)):
            raise DivergenceError(f"{self.trace.solver}: non-finite iterate at stage {stage}")
        if self.f0 is None:
            self.f0 = obj
        elif obj > DIVERGENCE_FACTOR * max(abs(self.f0), 1e-300):
            self.strikes += 1
            if self.strikes >= DIVERGENCE_PATIENCE:
                raise DivergenceError(
                    f"{self.trace.solver}: objective {obj:.3g} above {DIVERGENCE_FACTOR:g}x "
                    f"the initial {self.f0:.3g} for {self.strikes} consecutive records"
                )
        else:
            self.strikes = 0
        seconds = time.perf_counter() - self.t0 if self.record_time else None
        self.trace.rows.append(TraceRow(stage=stage, epochs=epochs, seconds=seconds, **metrics))
        st = self.stop
        if st.max_epochs is not None and epochs >= st.max_epochs - 1e-12:
            return True
        rel = metrics.get("rel_err")
        if st.rel_err_threshold is not None and rel is not None and rel <= st.rel_err_threshold:
            self.trace.stopped_early = True
            return True
        return False


def _start(problem, x0, v0):
    x = np.zeros(problem.f.d) if x0 is None else np.array(x0, dtype=float)
    v = np.zeros(problem.B.out_dim) if v0 is None else np.array(v0, dtype=float)
    return x, v


def _checked(problem, params, variant):
    if params.variant != variant:
        raise ValueError(f"params are for {params.variant!r}, not {variant!r}")
    report = validate_params(problem, params)
    if not report.ok and not params.override:
        raise ParameterError(report)
    return report


def _streams(params):
    shuffle_ss, block_ss = np.random.SeedSequence(params.seed).spawn(2)
    shuffle_seed = int(shuffle_ss.generate_state(1)[0]) if params.shuffle else None
    return shuffle_seed, np.random.default_rng(block_ss)


def run_pdfp(problem: ProblemSpec, params: SolverParams, x0=None, v0=None, iters=None, *,
             evaluate: Evaluator | None = None, stop: StopRule | None = None,
             keep_iterates=False, record_every=1, record_time=True) -> RunTrace:
    """Deterministic PDFP; one record per ``record_every`` iterations (1 epoch each)."""
    _checked(problem, params, "pdfp")
    iters = params.iters if iters is None else iters
    f = problem.f
    x, v = _start(problem, x0, v0)
    rec = _Recorder(problem, "pdfp", evaluate, stop, record_time)
    trace = rec.trace
    rec.record(0, 0.0, x, v)
    for k in range(1, iters + 1):
        x_new, v, _ = pdfp_step(problem, params.gamma, params.lam, x, v, f.full_grad(x))
        trace.residuals.append(float(np.max(np.abs(x_new - x), initial=0.0)))
        x = x_new
        if keep_iterates:
            trace.iterates.append(x.copy())
            trace.duals.append(v.copy())
        if (k % record_every == 0 or k == iters) and rec.record(k, float(k), x, v):
            break
    trace.x, trace.v = x, v
    return trace


def spdfp_step_size(gamma0: float, k: int, decay: float) -> float:
    """Diminishing primal step ``gamma0 / k**decay`` of iteration ``k >= 1``."""
    return gamma0 / k ** decay


def run_spdfp(problem: ProblemSpec, params: SolverParams, x0=None, v0=None, iters=None, *,
              evaluate: Evaluator | None = None, stop: StopRule | None = None,
              keep_iterates=False, record_time=True) -> RunTrace:
    """Mini-batch PDFP without variance reduction, step ``gamma / k**decay``.

    Records once per epoch (``n / b`` iterations).
    """
    _checked(problem, params, "spdfp")
    iters = params.iters if iters is None else iters
    f = problem.f
    shuffle_seed, rng = _streams(params)
    scheme = BatchScheme.build(f.n, params.batch_size(f.n), shuffle_seed)
    per_epoch = scheme.n_blocks
    x, v = _start(problem, x0, v0)
    rec = _Recorder(problem, "spdfp", evaluate, stop, record_time)
    trace = rec.trace
    rec.record(0, 0.0, x, v)
    for k in range(1, iters + 1):
        blk = int(rng.integers(scheme.n_blocks))
        if scheme.n_blocks == 1:
            grad = f.full_grad(x)
        else:
            grad = f.batch_grad(scheme.block(blk), x)
        gamma_k = spdfp_step_size(params.gamma, k, params.decay)
        x_new, v, _ = pdfp_step(problem, gamma_k, params.lam, x, v, grad)
        trace.residuals.append(float(np.max(np.abs(x_new - x), initial=0.0)))
        x = x_new
        if keep_iterates:
            trace.iterates.append(x.copy())
            trace.duals.append(v.copy())
            trace.blocks.append(blk)
        if (k % per_epoch == 0 or k == iters) and rec.record(k // per_epoch, k * scheme.b / f.n, x, v):
            break
    trace.x, trace.v = x, v
    return trace


def _inner_loop(problem, params, scheme, rng, anchor, x, v, trace, keep):
    f = problem.f
    sum_x = np.zeros_like(x)
    sum_v = np.zeros_like(v)
    for _ in range(params.m):
        blk = int(rng.integers(scheme.n_blocks))
        grad = svrg_grad(f, anchor, scheme, blk, x)
        x, v, _ = pdfp_step(problem, params.gamma, params.lam, x, v, grad)
        sum_x += x
        sum_v += v
        if keep:
            trace.iterates.append(x.copy())
            trace.duals.append(v.copy())
            trace.blocks.append(blk)
    return sum_x / params.m, sum_v / params.m, x, v


def run_svrg_pdfp_sc(problem: ProblemSpec, params: SolverParams, x0=None, v0=None, *,
                     evaluate: Evaluator | None = None, stop: StopRule | None = None,
                     keep_iterates=False, record_time=True) -> RunTrace:
    """SVRG-PDFP for strongly convex ``f``: each stage restarts from the stage averages.

    One record per stage, evaluated at the stage averages ``(x~_s, v~_s)``.
    """
    _checked(problem, params, "svrg-sc")
    if problem.g.conj_strong_convexity <= 0 and not _rows_orthonormal(problem.B):
        warnings.warn(
            f"g* of {problem.g.kind} is not strongly convex; the linear rate is not "
            "certified (a Huber smoothing of the L1 norm restores it)",
            stacklevel=2,
        )
    f = problem.f
    shuffle_seed, rng = _streams(params)
    scheme = BatchScheme.build(f.n, params.batch_size(f.n), shuffle_seed)
    stage_cost = (f.n + params.m * scheme.b) / f.n
    x_t, v_t = _start(problem, x0, v0)
    rec = _Recorder(problem, "svrg-sc", evaluate, stop, record_time)
    trace = rec.trace
    trace.stage_x.append(x_t.copy())
    trace.stage_v.append(v_t.copy())
    rec.record(0, 0.0, x_t, v_t)
    for s in range(1, params.stages + 1):
        anchor = make_anchor(f, x_t)
        x_t, v_t, _, _ = _inner_loop(problem, params, scheme, rng, anchor, x_t.copy(), v_t.copy(),
                                     trace, keep_iterates)
        trace.stage_x.append(x_t.copy())
        trace.stage_v.append(v_t.copy())
        if rec.record(s, s * stage_cost, x_t, v_t):
            break
    trace.x, trace.v = x_t, v_t
    return trace


def run_svrg_pdfp_gc(problem: ProblemSpec, params: SolverParams, x0=None, v0=None, *,
                     evaluate: Evaluator | None = None, stop: StopRule | None = None,
                     keep_iterates=False, record_time=True) -> RunTrace:
    """SVRG-PDFP for general convex ``f``.

    Inner loops restart from the last inner iterate; the snapshot is the stage
    average. Row ``s`` evaluates the ergodic mean ``(1/s) sum_{i<=s} (x~_i, v~_i)``,
    i.e. the output the algorithm would return with ``T = s``.
    """
    _checked(problem, params, "svrg-gc")
    f = problem.f
    shuffle_seed, rng = _streams(params)
    scheme = BatchScheme.build(f.n, params.batch_size(f.n), shuffle_seed)
    stage_cost = (f.n + params.m * scheme.b) / f.n
    x_t, v_t = _start(problem, x0, v0)
    x_h, v_h = x_t.copy(), v_t.copy()
    acc_x = np.zeros_like(x_t)
    acc_v = np.zeros_like(v_t)
    rec = _Recorder(problem, "svrg-gc", evaluate, stop, record_time)
    trace = rec.trace
    trace.stage_x.append(x_t.copy())
    trace.stage_v.append(v_t.copy())
    rec.record(0, 0.0, x_t, v_t)
    x_bar, v_bar = x_t, v_t
    for s in range(1, params.stages + 1):
        anchor = make_anchor(f, x_t)
        x_t, v_t, x_h, v_h = _inner_loop(problem, params, scheme, rng, anchor, x_h, v_h,
                                         trace, keep_iterates)
        trace.stage_x.append(x_t.copy())
        trace.stage_v.append(v_t.copy())
        acc_x += x_t
        acc_v += v_t
        x_bar, v_bar = acc_x / s, acc_v / s
        if rec.record(s, s * stage_cost, x_bar, v_bar):
            break
    trace.x, trace.v = x_bar, v_bar
    return trace


_RUNNERS = {
    "pdfp": run_pdfp,
    "spdfp": run_spdfp,
    "svrg-sc": run_svrg_pdfp_sc,
    "svrg-gc": run_svrg_pdfp_gc,
}


def solve(problem: ProblemSpec, params: SolverParams, x0=None, v0=None, **kw) -> RunTrace:
    return _RUNNERS[params.variant](problem, params, x0, v0, **kw)


def with_seed(params: SolverParams, seed: int) -> SolverParams:
    return replace(params, seed=seed)
