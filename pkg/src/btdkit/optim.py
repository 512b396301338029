"""Solvers for the block-term least-squares problem.

Twelve methods behind one entry point (:func:`minimize`):

======== ==============================================================
als      alternating least squares (joint per-mode solves, then cores)
gd       gradient descent with Armijo backtracking
cg-fr    nonlinear conjugate gradient, Fletcher-Reeves
cg-pr    nonlinear conjugate gradient, Polak-Ribiere
cg-hs    nonlinear conjugate gradient, Hestenes-Stiefel
cg-dy    nonlinear conjugate gradient, Dai-Yuan
gn       Gauss-Newton (inner CG on J^T J) with Armijo backtracking
lm-q     Levenberg-Marquardt, multiplicative damping update
lm-n     Levenberg-Marquardt, Nielsen damping update
tr-dl    trust region with a dogleg step on the Gauss-Newton model
scg-qn   Steihaug (truncated CG) trust region on J^T J
scg-fn   Steihaug trust region on the full Hessian J^T J + Q
======== ==============================================================

Constraint schemes: ``none``, ``projected`` (feasibility projection after
every accepted step / sweep), and ``lagrange`` (Newton-KKT outer loop on
the bordered system; second-order methods only — the method choice picks
the Hessian block and damping policy).

All methods are deterministic for a fixed starting model and
configuration; wall-clock time is recorded in traces but never branches
the computation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import constraints as cons
from .errors import ConfigError, NumericalError
from .model import pack, reconstruct, unpack
from .objective import ResidualProblem
from .tensor_ops import mttkrp, multi_mode_multiply, unfold

__all__ = ["METHODS", "OptimizerConfig", "TraceRecord", "Trace", "FitResult", "minimize"]

METHODS = (
    "als", "gd", "cg-fr", "cg-pr", "cg-hs", "cg-dy",
    "gn", "lm-q", "lm-n", "tr-dl", "scg-qn", "scg-fn",
)
_FIRST_ORDER = ("gd", "cg-fr", "cg-pr", "cg-hs", "cg-dy")
_SECOND_ORDER = ("gn", "lm-q", "lm-n", "tr-dl", "scg-qn", "scg-fn")
_SCHEMES = ("none", "projected", "lagrange")


def canonical_method(name):
    key = str(name).strip().lower().replace("_", "-")
    if key == "dogleg":
        key = "tr-dl"
    if key not in METHODS:
        raise ConfigError(f"unknown method {name!r}; expected one of {', '.join(METHODS)}")
    return key


@dataclass(frozen=True)
class OptimizerConfig:
    """Knobs shared by every method; method-specific fields are ignored
    by methods that do not use them."""

    method: str = "als"
    max_iters: int = 1000
    grad_tol: float = 1e-8
    step_tol: float = 1e-12
    objective_tol: float = 0.0  # stop when f <= this (0 disables)
    residual_tol: float = 0.0  # stop when relative residual <= this (0 disables)
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    max_line_evals: int = 40
    inner_max_iters: int = 100
    inner_tol: float = 1e-10
    trust_radius: float = 1.0
    lm_damping: float = 1.0
    cg_restart: int | None = None  # default: parameter count
    record_gradient: bool = True  # ALS only: gradient costs extra there

    def __post_init__(self):
        object.__setattr__(self, "method", canonical_method(self.method))
        if self.max_iters < 0:
            raise ConfigError("max_iters must be nonnegative")


@dataclass
class TraceRecord:
    iteration: int
    objective: float
    grad_norm: float
    step_norm: float
    inner_iters: int
    elapsed_s: float
    kkt_residual: float | None = None
    constraint_violation: float | None = None


@dataclass
class Trace:
    records: list = field(default_factory=list)

    def append(self, rec):
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def final(self):
        return self.records[-1]

    def objectives(self):
        return np.array([r.objective for r in self.records])

    def columns(self):
        cols = ["iteration", "objective", "grad_norm", "step_norm", "inner_iters", "elapsed_s"]
        if any(r.kkt_residual is not None for r in self.records):
            cols.append("kkt_residual")
        if any(r.constraint_violation is not None for r in self.records):
            cols.append("constraint_violation")
        return cols

    def rows(self):
        cols = self.columns()
        return [{c: getattr(r, c) for c in cols} for r in self.records]


@dataclass
class FitResult:
    model: object
    params: np.ndarray
    trace: Trace
    status: str  # 'converged' | 'max_iters' | 'stalled'
    method: str
    objective: float
    relative_residual: float

    @property
    def n_iters(self):
        return self.trace.final.iteration


def minimize(target, model0, config, constraint="none"):
    """Fit ``model0`` to ``target`` with the configured method.

    ``constraint`` selects the enforcement scheme; ``projected`` and
    ``lagrange`` require a grouped model, and ``lagrange`` additionally a
    second-order method.
    """
    if constraint not in _SCHEMES:
        raise ConfigError(f"unknown constraint scheme {constraint!r}")
    if constraint in ("projected", "lagrange") and model0.group is None:
        raise ConfigError(f"constraint scheme {constraint!r} needs a grouped model")
    method = config.method
    if constraint == "lagrange":
        if method not in _SECOND_ORDER:
            raise ConfigError(
                "the lagrange scheme needs a second-order method "
                f"(one of {', '.join(_SECOND_ORDER)}), not {method!r}"
            )
        return _minimize_kkt(target, model0, config)
    if method == "als":
        return _minimize_als(target, model0, config, constraint)
    return _minimize_smooth(target, model0, config, constraint)


# ---------------------------------------------------------------------------
# shared pieces


def _check_finite(f):
    if not np.isfinite(f):
        raise NumericalError("objective became non-finite")


def _make_projector(problem, constraint):
    if constraint != "projected":
        return None

    def proj(x):
        model = unpack(x, problem.template, problem.layout)
        return pack(cons.project_model(model), problem.layout)

    return proj


def _armijo(problem, x, f, g, d, cfg, proj):
    """Backtracking line search; returns (x_new, f_new, evals) or None.

    With a projection in play the sufficient-decrease test uses the
    actual displacement, f(P(x + t d)) <= f + c1 <g, P(x + t d) - x>.
    """
    t = 1.0
    for evals in range(1, cfg.max_line_evals + 1):
        xt = x + t * d
        if proj is not None:
            xt = proj(xt)
        problem.set_params(xt)
        ft = problem.objective()
        _check_finite(ft)
        decrease = g @ (xt - x)
        if decrease < 0 and ft <= f + cfg.armijo_c1 * decrease:
            return xt, ft, evals
        t *= cfg.backtrack
    return None


def _cg_solve(apply_h, b, tol, maxiter):
    """Plain conjugate gradients for an SPD operator, from a zero start.
    Returns (x, iters).  Bails out on nonpositive curvature."""
    x = np.zeros_like(b)
    r = b.copy()
    d = r.copy()
    rr = r @ r
    bnorm = np.sqrt(rr)
    if bnorm == 0.0:
        return x, 0
    for it in range(1, maxiter + 1):
        hd = apply_h(d)
        dhd = d @ hd
        if dhd <= 0:
            break
        alpha = rr / dhd
        x += alpha * d
        r -= alpha * hd
        rr_new = r @ r
        if np.sqrt(rr_new) <= tol * bnorm:
            return x, it
        d = r + (rr_new / rr) * d
        rr = rr_new
    return x, maxiter


def _steihaug(apply_h, g, delta, tol, maxiter):
    """Truncated CG for the trust-region subproblem min g.s + 0.5 s.H.s,
    ||s|| <= delta.  Returns (step, hit_boundary, iters)."""
    z = np.zeros_like(g)
    r = -g.copy()
    d = r.copy()
    rr = r @ r
    gnorm = np.sqrt(rr)
    if gnorm == 0.0:
        return z, False, 0
    for it in range(1, maxiter + 1):
        hd = apply_h(d)
        dhd = d @ hd
        if dhd <= 0:
            return _to_boundary(z, d, delta), True, it
        alpha = rr / dhd
        z_next = z + alpha * d
        if np.linalg.norm(z_next) >= delta:
            return _to_boundary(z, d, delta), True, it
        z = z_next
        r -= alpha * hd
        rr_new = r @ r
        if np.sqrt(rr_new) <= tol * gnorm:
            return z, False, it
        d = r + (rr_new / rr) * d
        rr = rr_new
    return z, False, maxiter


def _to_boundary(z, d, delta):
    """z + tau*d with ||z + tau*d|| == delta, tau >= 0."""
    a = d @ d
    b = 2.0 * (z @ d)
    c = z @ z - delta * delta
    tau = (-b + np.sqrt(max(b * b - 4 * a * c, 0.0))) / (2 * a)
    return z + tau * d


def _dogleg(g, p_gn, apply_h, delta):
    """Dogleg path between the Cauchy point and the Gauss-Newton point."""
    gn_norm = np.linalg.norm(p_gn)
    if gn_norm <= delta:
        return p_gn, gn_norm < delta * 0.999
    ghg = g @ apply_h(g)
    if ghg <= 0:
        return -(delta / np.linalg.norm(g)) * g, True
    p_u = -(g @ g) / ghg * g
    u_norm = np.linalg.norm(p_u)
    if u_norm >= delta:
        return -(delta / np.linalg.norm(g)) * g, True
    return _to_boundary(p_u, p_gn - p_u, delta), True


def _predicted_reduction(g, step, apply_h):
    return -(g @ step) - 0.5 * (step @ apply_h(step))


# ---------------------------------------------------------------------------
# smooth (gradient-based) driver


def _minimize_smooth(target, model0, cfg, constraint):
    problem = ResidualProblem(model0, target)
    proj = _make_projector(problem, constraint)
    x = problem.params()
    if proj is not None:
        x = proj(x)
        problem.set_params(x)
    method = cfg.method
    n = problem.n_params
    restart_every = cfg.cg_restart or n

    f = problem.objective()
    _check_finite(f)
    g = problem.gradient()
    gnorm = float(np.linalg.norm(g))

    t0 = time.perf_counter()
    trace = Trace()
    trace.append(TraceRecord(0, f, gnorm, 0.0, 0, 0.0))
    _viol_into(trace.final, problem, constraint)

    status = "max_iters"
    d_prev = None
    g_prev = None
    delta = cfg.trust_radius
    lam = cfg.lm_damping
    nu = 2.0

    if gnorm <= cfg.grad_tol:
        status = "converged"

    it = 0
    while status == "max_iters" and it < cfg.max_iters:
        it += 1
        inner = 0
        accepted = False

        if method in _FIRST_ORDER:
            if method == "gd" or d_prev is None:
                d = -g
            else:
                beta = _cg_beta(method, g, g_prev, d_prev)
                if beta < 0 or it % restart_every == 0:
                    beta = 0.0
                d = -g + beta * d_prev
                if g @ d >= 0:
                    d = -g
            res = _armijo(problem, x, f, g, d, cfg, proj)
            if res is None:
                status = "stalled"
                problem.set_params(x)
                break
            x_new, f_new, inner = res
            d_prev, g_prev = d, g
            accepted = True

        elif method == "gn":
            hop = problem.hessian_operator("gauss_newton")
            d, inner = _cg_solve(hop.apply, -g, cfg.inner_tol, cfg.inner_max_iters)
            if np.linalg.norm(d) == 0.0 or g @ d >= 0:
                d = -g
            res = _armijo(problem, x, f, g, d, cfg, proj)
            if res is None:
                status = "stalled"
                problem.set_params(x)
                break
            x_new, f_new, evals = res
            inner += evals
            accepted = True

        elif method in ("lm-q", "lm-n"):
            hop = problem.hessian_operator("gauss_newton")
            lam_eff = max(lam, 1e-15)
            step, inner = _cg_solve(
                lambda v: hop.apply(v) + lam_eff * v, -g, cfg.inner_tol, cfg.inner_max_iters
            )
            x_new = x + step
            if proj is not None:
                x_new = proj(x_new)
            problem.set_params(x_new)
            f_new = problem.objective()
            _check_finite(f_new)
            if method == "lm-q":
                if f_new < f:
                    lam = max(lam * 0.5, 1e-15)
                    accepted = True
                else:
                    lam *= 2.0
            else:
                pred = _predicted_reduction(g, x_new - x, hop.apply)
                rho = (f - f_new) / pred if pred > 0 else -1.0
                if rho > 0 and f_new < f:
                    lam = lam * max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
                    lam = max(lam, 1e-15)
                    nu = 2.0
                    accepted = True
                else:
                    lam *= nu
                    nu *= 2.0
            if not accepted:
                problem.set_params(x)
                if lam > 1e18:
                    status = "stalled"
                    break

        else:  # trust-region family
            kind = "full" if method == "scg-fn" else "gauss_newton"
            hop = problem.hessian_operator(kind)
            if method == "tr-dl":
                p_gn, inner = _cg_solve(hop.apply, -g, cfg.inner_tol, cfg.inner_max_iters)
                if np.linalg.norm(p_gn) == 0.0:
                    p_gn = -g
                step, _ = _dogleg(g, p_gn, hop.apply, delta)
            else:
                step, _, inner = _steihaug(hop.apply, g, delta, cfg.inner_tol, cfg.inner_max_iters)
            step_norm = np.linalg.norm(step)
            if step_norm == 0.0:
                status = "stalled"
                break
            pred = _predicted_reduction(g, step, hop.apply)
            x_new = x + step
            if proj is not None:
                x_new = proj(x_new)
            problem.set_params(x_new)
            f_new = problem.objective()
            _check_finite(f_new)
            rho = (f - f_new) / pred if pred > 0 else -1.0
            if rho < 0.25:
                delta *= 0.25
            elif rho > 0.75 and step_norm >= 0.99 * delta:
                delta *= 2.0
            if rho > 0 and f_new < f:
                accepted = True
            else:
                problem.set_params(x)
                if delta < 1e-16:
                    status = "stalled"
                    break

        if not accepted:
            continue

        step_norm = float(np.linalg.norm(x_new - x))
        x, f = x_new, f_new
        problem.set_params(x)
        g = problem.gradient()
        gnorm = float(np.linalg.norm(g))
        trace.append(TraceRecord(it, f, gnorm, step_norm, inner, time.perf_counter() - t0))
        _viol_into(trace.final, problem, constraint)

        if gnorm <= cfg.grad_tol:
            status = "converged"
        elif step_norm <= cfg.step_tol:
            status = "converged"
        elif cfg.objective_tol > 0 and f <= cfg.objective_tol:
            status = "converged"
        elif cfg.residual_tol > 0 and problem.relative_residual() <= cfg.residual_tol:
            status = "converged"

    problem.set_params(x)
    return FitResult(
        model=problem.model, params=x, trace=trace, status=status, method=method,
        objective=f, relative_residual=problem.relative_residual(),
    )


def _cg_beta(method, g, g_prev, d_prev):
    y = g - g_prev
    if method == "cg-fr":
        denom = g_prev @ g_prev
        return (g @ g) / denom if denom > 0 else 0.0
    if method == "cg-pr":
        denom = g_prev @ g_prev
        return (g @ y) / denom if denom > 0 else 0.0
    if method == "cg-hs":
        denom = d_prev @ y
        return (g @ y) / denom if denom != 0 else 0.0
    if method == "cg-dy":
        denom = d_prev @ y
        return (g @ g) / denom if denom != 0 else 0.0
    raise ConfigError(f"not a CG variant: {method}")


def _viol_value(model):
    feas = cons.feasibility(model)
    orth = max(feas["orthogonality"].values()) if feas["orthogonality"] else 0.0
    return max(orth, feas["weight_sum_error"], feas["bound_violation"])


def _viol_into(record, problem, constraint):
    if constraint == "projected":
        record.constraint_violation = _viol_value(problem.model)


# ---------------------------------------------------------------------------
# alternating least squares


def _lr_cofactor_gram(t1, t2, k):
    """V_{t1}^T V_{t2} for two (L_r,1) co-factors at mode k: the Hadamard
    product of the other modes' factor cross-Grams."""
    out = None
    for l in range(len(t1)):
        if l == k:
            continue
        g = t1[l].T @ t2[l]
        out = g if out is None else out * g
    return out


def _tucker_cofactor(term, k):
    """Small form of a Tucker co-factor at mode k: the term reconstruction
    with mode k left on core ranks; unfolding it at k gives V^T."""
    return multi_mode_multiply(term.core, term.factors, skip=k)


def _als_mode_gram(entry_a, entry_b, k):
    """V_a^T V_b at mode k for any mix of 'lr'/'tucker' entries; all
    computed on rank-sized objects."""
    kind_a, fac_a, core_a = entry_a
    kind_b, fac_b, core_b = entry_b
    if kind_a == "lr" and kind_b == "lr":
        return _lr_cofactor_gram(fac_a, fac_b, k)
    cross = [fac_a[l].T @ fac_b[l] for l in range(len(fac_a))]
    if kind_a == "lr" and kind_b == "tucker":
        return mttkrp(core_b, [c.T for c in cross], k).T
    if kind_a == "tucker" and kind_b == "lr":
        return mttkrp(core_a, cross, k)
    small = multi_mode_multiply(core_b, cross, skip=k)
    return unfold(core_a, k) @ unfold(small, k).T


def _als_data_block(target, entry, k):
    """unfold(target, k) @ V for one term's co-factor at mode k."""
    kind, factors, core = entry
    if kind == "lr":
        return mttkrp(target, factors, k)
    small = multi_mode_multiply(target, [a.T for a in factors], skip=k)
    return unfold(small, k) @ unfold(core, k).T


def _als_sweep(model, target, layout):
    """One alternating sweep: per mode a joint least-squares update of all
    free blocks (min-norm via pseudoinverse), then per-term core updates.
    Every update minimizes the objective exactly over its block, so the
    objective is nonincreasing across the sweep."""
    d = model.order
    x = pack(model, layout)

    for k in range(d):
        entries = []
        specs = []  # (term_kind, index, chain) aligned with entries
        for s, t in enumerate(model.lr_terms):
            entries.append(("lr", t.expanded_factors(), None))
            if k < t.n_full_modes:
                specs.append(("lr", s, "matrix"))
            elif t.vector_free[k - t.n_full_modes]:
                specs.append(("lr", s, "vector"))
            else:
                specs.append(("lr", s, "frozen"))
        for m, t in enumerate(model.tucker_terms):
            entries.append(("tucker", list(t.factors), t.core))
            specs.append(("tucker", m, "diag" if t.factor_kind(k) == "diag" else "matrix"))

        grams = [[_als_mode_gram(entries[a], entries[b], k) for b in range(len(entries))]
                 for a in range(len(entries))]
        data = [_als_data_block(target, e, k) for e in entries]

        has_diag = any(sp[2] == "diag" for sp in specs)
        free_idx = [i for i, sp in enumerate(specs) if sp[2] in ("matrix", "vector")]
        if has_diag and free_idx:
            raise ConfigError(
                "a diagonal-only factor shares its mode with other free blocks; "
                "this layout has no joint ALS update"
            )

        if has_diag:
            _als_diag_update(model, specs, entries, grams, data, k, x, layout)
        elif free_idx:
            _als_joint_update(model, specs, entries, grams, data, k, x, layout, free_idx)

        model = unpack(x, model, layout)

    for m in range(len(model.tucker_terms)):
        _als_core_update(model, target, m, x, layout)
        model = unpack(x, model, layout)
    return model, x


def _collapse(mat, spec_kind, axis):
    """Sum replicated co-factor columns for compact (vector) blocks."""
    if spec_kind != "vector":
        return mat
    return mat.sum(axis=axis, keepdims=True)


def _als_joint_update(model, specs, entries, grams, data, k, x, layout, free_idx):
    frozen_idx = [i for i, sp in enumerate(specs) if sp[2] == "frozen"]
    blocks_b = []
    for i in free_idx:
        b = _collapse(data[i], specs[i][2], axis=1)
        for j in frozen_idx:
            t = model.lr_terms[specs[j][1]]
            v = t.vectors[k - t.n_full_modes]
            colsum = grams[j][i].sum(axis=0)
            if specs[i][2] == "vector":
                colsum = np.array([colsum.sum()])
            b = b - np.outer(v, colsum)
        blocks_b.append(b)
    bmat = np.hstack(blocks_b)

    rows = []
    for a in free_idx:
        row = []
        for b in free_idx:
            g = grams[a][b]
            g = _collapse(g, specs[a][2], axis=0)
            g = _collapse(g, specs[b][2], axis=1)
            row.append(g)
        rows.append(np.hstack(row))
    gmat = np.vstack(rows)

    sol = bmat @ np.linalg.pinv(gmat, hermitian=True)

    start = 0
    for i in free_idx:
        kind, term_idx, chain = specs[i]
        if chain == "matrix":
            width = entries[i][1][k].shape[1]
            block = sol[:, start:start + width]
            slot_kind = "lr_factor" if kind == "lr" else "tucker_factor"
            slot = layout.find(slot_kind, term_idx, k)
            x[layout.slice_of(slot)] = np.ravel(block, order="F")
        else:  # compact vector
            width = 1
            slot = layout.find("lr_vector", term_idx, k)
            x[layout.slice_of(slot)] = sol[:, start]
        start += width


def _als_diag_update(model, specs, entries, grams, data, k, x, layout):
    """Per-row solve for a diagonal-only factor (the only free block on
    its mode): p_i minimizes the residual of row i against co-factor
    column i, with frozen terms folded into the data side."""
    di = next(i for i, sp in enumerate(specs) if sp[2] == "diag")
    term_idx = specs[di][1]
    n = entries[di][1][k].shape[0]
    num = np.diagonal(data[di]).copy()
    for j, sp in enumerate(specs):
        if sp[2] != "frozen":
            continue
        t = model.lr_terms[sp[1]]
        v = t.vectors[k - t.n_full_modes]
        num -= v * grams[j][di].sum(axis=0)
    den = np.diagonal(grams[di][di])
    p = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    slot = layout.find("tucker_diag", term_idx, k)
    x[layout.slice_of(slot)] = p


def _als_core_update(model, target, m, x, layout):
    """Exact core update: pseudoinverse factors applied to the residual
    left by every other term."""
    term = model.tucker_terms[m]
    resid = target - (reconstruct(model) - multi_mode_multiply(term.core, term.factors))
    pinvs = [np.linalg.pinv(a) for a in term.factors]
    core = multi_mode_multiply(resid, pinvs)
    slot = layout.find("tucker_core", m, -1)
    x[layout.slice_of(slot)] = np.ravel(core, order="F")


def _minimize_als(target, model0, cfg, constraint):
    from .model import layout_of

    layout = layout_of(model0)
    model = model0
    target = np.asarray(target, dtype=float)
    x = pack(model, layout)

    def objective_of(mdl):
        z = reconstruct(mdl) - target
        return 0.5 * float(np.vdot(z, z))

    def grad_norm_of(mdl, x_now):
        if not cfg.record_gradient:
            return np.nan
        prob = ResidualProblem(mdl, target)
        prob.set_params(x_now)
        return float(np.linalg.norm(prob.gradient()))

    tnorm = float(np.linalg.norm(target.ravel()))
    f = objective_of(model)
    _check_finite(f)
    t0 = time.perf_counter()
    trace = Trace()
    trace.append(TraceRecord(0, f, grad_norm_of(model, x), 0.0, 0, 0.0))
    if constraint == "projected":
        trace.final.constraint_violation = _viol_value(model)

    status = "max_iters"
    for sweep in range(1, cfg.max_iters + 1):
        model, x_new = _als_sweep(model, target, layout)
        if constraint == "projected":
            model = cons.project_model(model)
            x_new = pack(model, layout)
        f_new = objective_of(model)
        _check_finite(f_new)
        step_norm = float(np.linalg.norm(x_new - x))
        x, f = x_new, f_new
        gnorm = grad_norm_of(model, x)
        trace.append(TraceRecord(sweep, f, gnorm, step_norm, 0, time.perf_counter() - t0))
        if constraint == "projected":
            trace.final.constraint_violation = _viol_value(model)

        if np.isfinite(gnorm) and gnorm <= cfg.grad_tol:
            status = "converged"
            break
        if step_norm <= cfg.step_tol:
            status = "converged"
            break
        if cfg.objective_tol > 0 and f <= cfg.objective_tol:
            status = "converged"
            break
        if cfg.residual_tol > 0 and tnorm > 0 and np.sqrt(2 * f) / tnorm <= cfg.residual_tol:
            status = "converged"
            break

    rel = np.sqrt(2 * f) / tnorm if tnorm > 0 else np.sqrt(2 * f)
    return FitResult(model=model, params=x, trace=trace, status=status, method="als",
                     objective=f, relative_residual=float(rel))


# ---------------------------------------------------------------------------
# Newton-KKT driver (lagrange scheme)


def _minimize_kkt(target, model0, cfg):
    """Damped Newton iterations on the KKT conditions of the relaxed
    constrained problem.  The method choice picks the Hessian block (full
    for scg-fn, Gauss-Newton otherwise); lm variants adapt a diagonal
    damping.  Inequality multipliers are clipped nonnegative after every
    update and their columns enter the system only while active."""
    problem = ResidualProblem(model0, target)
    group = model0.group
    x = problem.params()
    mult = cons.MultiplierState.zeros(group)
    kind = "full" if cfg.method == "scg-fn" else "gauss_newton"
    lam_damp = cfg.lm_damping if cfg.method in ("lm-q", "lm-n") else 0.0
    active_tol = 1e-10

    def kkt_state(x_now, tau_now):
        problem.set_params(x_now)
        model = problem.model
        g = problem.gradient()
        jac = cons.constraint_jacobian(model, problem.layout)
        vals = cons.constraint_values(model)
        grad_l = g + jac @ tau_now
        return model, g, jac, vals, grad_l

    def active_mask(vals, tau_now):
        m = len(group.modes_of_interest)
        mask = np.ones(vals.size, dtype=bool)
        mask[m] = False  # lambda column: structurally zero
        for i in range(group.n_objects):
            j = m + 2 + i
            # zeta_i active while the bound binds or carries a multiplier
            mask[j] = (vals[j] >= -active_tol) or (tau_now[j] > 0)
        return mask

    m_modes = len(group.modes_of_interest)

    def kkt_merit(grad_l_now, vals, tau_now):
        """Half squared norm of the KKT residual: stationarity, the equality
        rows, and the min(slack, multiplier) complementarity residual of the
        bounds — an interior bound with a zero multiplier contributes
        nothing, so the merit can actually reach zero at a KKT point."""
        eq = np.concatenate([vals[:m_modes], vals[m_modes + 1:m_modes + 2]])
        comp = np.minimum(-vals[m_modes + 2:], tau_now[m_modes + 2:])
        return 0.5 * (grad_l_now @ grad_l_now) + 0.5 * float(eq @ eq) + 0.5 * float(comp @ comp)

    def violation_norm(vals):
        eq = np.concatenate([vals[:m_modes], vals[m_modes + 1:m_modes + 2]])
        viol = np.maximum(vals[m_modes + 2:], 0.0)
        return float(np.sqrt(eq @ eq + viol @ viol))

    tau = mult.stack()
    model, g, jac, vals, grad_l = kkt_state(x, tau)
    merit = kkt_merit(grad_l, vals, tau)

    t0 = time.perf_counter()
    trace = Trace()
    f = problem.objective()
    rec = TraceRecord(0, f, float(np.linalg.norm(g)), 0.0, 0, 0.0,
                      kkt_residual=float(np.sqrt(2 * merit)),
                      constraint_violation=violation_norm(vals))
    trace.append(rec)

    status = "max_iters"
    for it in range(1, cfg.max_iters + 1):
        if np.sqrt(2 * merit) <= cfg.grad_tol:
            status = "converged"
            break
        mask = active_mask(vals, tau)
        cols = jac[:, mask]
        hop = problem.hessian_operator(kind)
        damp = lam_damp

        def h_apply(v, _hop=hop, _damp=damp):
            out = _hop.apply(v)
            return out + _damp * v if _damp else out

        try:
            dx, dtau_act, info = cons.bordered_solve(
                h_apply, cols, -grad_l, -vals[mask],
                tol=cfg.inner_tol,
                maxiter=max(cfg.inner_max_iters, 2 * (problem.n_params + int(mask.sum()))),
            )
        except NumericalError:
            status = "stalled"
            break
        dtau = np.zeros_like(tau)
        dtau[mask] = dtau_act
        dtau[~mask] = -tau[~mask]  # retire inactive multipliers

        alpha = 1.0
        improved = None
        for _ in range(cfg.max_line_evals):
            x_try = x + alpha * dx
            tau_try = tau + alpha * dtau
            m_ofs = len(group.modes_of_interest) + 2
            tau_try[m_ofs:] = np.maximum(tau_try[m_ofs:], 0.0)
            model_t, g_t, jac_t, vals_t, grad_lt = kkt_state(x_try, tau_try)
            merit_t = kkt_merit(grad_lt, vals_t, tau_try)
            if np.isfinite(merit_t) and merit_t < merit:
                improved = (x_try, tau_try, model_t, g_t, jac_t, vals_t, grad_lt, merit_t)
                break
            alpha *= cfg.backtrack
        if improved is None:
            if cfg.method in ("lm-q", "lm-n") and lam_damp < 1e18:
                lam_damp = max(lam_damp, 1e-8) * 4.0
                problem.set_params(x)
                continue
            status = "stalled"
            problem.set_params(x)
            break
        if cfg.method in ("lm-q", "lm-n") and alpha == 1.0:
            lam_damp = max(lam_damp * 0.5, 0.0 if cfg.method == "lm-q" else 1e-12)

        step_norm = float(np.linalg.norm(alpha * dx))
        x, tau, model, g, jac, vals, grad_l, merit = improved
        problem.set_params(x)
        f = problem.objective()
        trace.append(TraceRecord(it, f, float(np.linalg.norm(g)), step_norm, 0,
                                 time.perf_counter() - t0,
                                 kkt_residual=float(np.sqrt(2 * merit)),
                                 constraint_violation=violation_norm(vals)))
        if step_norm <= cfg.step_tol:
            status = "converged"
            break

    problem.set_params(x)
    return FitResult(model=problem.model, params=x, trace=trace, status=status,
                     method=cfg.method, objective=problem.objective(),
                     relative_residual=problem.relative_residual())
