"""Group-structure constraint handling.

Grouped models carry two kinds of side conditions:

* on each mode of interest, every object's individual factor must be
  orthogonal to the common subspace of that mode;
* the group weights p must stay on the shifted simplex
  ``sum(p) == p_cum``, ``p >= p_min > 0``.

Two enforcement routes are provided and deliberately kept distinct: a
feasibility *projection* (applied between optimizer iterations) and a
*Lagrangian* route built from constraint functionals, their gradients,
and a bordered (saddle-point) solve used by Newton-KKT iterations.

Multiplier stacking order is ``[mu_1 .. mu_|Omega|, lambda, theta,
zeta_1 .. zeta_N]``.  Under the frozen parameterization used by the model
builders the off-diagonal of the group-mode factor is structural, so the
lambda functional is constant and its gradient column is identically
zero; the penalty keeps the term (it costs nothing) while KKT drivers
drop the column to keep the saddle system nonsingular.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, minres

from .errors import ConfigError, NumericalError
from .model import BlockTermModel, LrTerm, TuckerTerm, common_factor, group_weights, layout_of

__all__ = [
    "orth_project",
    "simplex_box_project",
    "project_model",
    "MultiplierState",
    "constraint_values",
    "constraint_jacobian",
    "penalty_value",
    "penalty_gradient",
    "feasibility",
    "bordered_solve",
]


# ---------------------------------------------------------------------------
# projections


def orth_project(x, basis):
    """Project the columns of ``x`` onto the orthogonal complement of
    ``span(basis)``: ``(I - Y (Y^T Y)^+ Y^T) x``.

    Computed through a least-squares solve, which degrades gracefully to
    the pseudoinverse when the basis is rank deficient.
    """
    x = np.asarray(x, dtype=float)
    basis = np.asarray(basis, dtype=float)
    if basis.ndim != 2 or basis.shape[0] != x.shape[0]:
        raise ConfigError("basis and x must share their row space")
    coeff, *_ = np.linalg.lstsq(basis, x, rcond=None)
    return x - basis @ coeff


def _simplex_project(z, radius):
    """Euclidean projection onto {w >= 0, sum(w) == radius} by the
    sort/threshold rule."""
    n = z.size
    u = np.sort(z)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, n + 1)
    feasible = u - (css - radius) / k > 0
    rho = int(k[feasible][-1])
    theta = (css[rho - 1] - radius) / rho
    return np.maximum(z - theta, 0.0)


def simplex_box_project(y, p_cum, p_min):
    """Euclidean projection onto ``{p : sum(p) == p_cum, p >= p_min}``.

    Shifts the lower bound to zero, projects onto the scaled simplex of
    radius ``p_cum - n*p_min``, and shifts back.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    radius = p_cum - n * p_min
    if radius < 0:
        raise ConfigError("p_min too large for p_cum: feasible set is empty")
    if radius == 0.0:
        return np.full(n, p_min)
    return _simplex_project(y - p_min, radius) + p_min


def project_model(model):
    """Return a feasible copy of a grouped model: individual factors on
    every mode of interest are projected orthogonal to the current common
    subspace first, then the weights are projected onto their simplex."""
    group = model.group
    if group is None:
        raise ConfigError("project_model needs a grouped model")
    n_ind = group.n_objects

    lr_terms = list(model.lr_terms)
    for gamma in group.modes_of_interest:
        basis = common_factor(model, gamma)
        for i in range(n_ind):
            t = lr_terms[i]
            factors = list(t.factors)
            factors[gamma] = orth_project(factors[gamma], basis)
            lr_terms[i] = LrTerm(tuple(factors), t.vectors, t.vector_free)

    tucker_terms = list(model.tucker_terms)
    gmode = model.order - 1
    p = simplex_box_project(group_weights(model), group.p_cum, group.p_min)
    if group.flavor == "glro":
        t = lr_terms[-1]
        vectors = list(t.vectors)
        vectors[gmode - t.n_full_modes] = p
        lr_terms[-1] = LrTerm(t.factors, tuple(vectors), t.vector_free)
    else:
        t = tucker_terms[0]
        factors = list(t.factors)
        factors[gmode] = np.diag(p)
        tucker_terms[0] = TuckerTerm(t.core, tuple(factors), t.diag_modes)
    return BlockTermModel(model.dims, tucker_terms, lr_terms, group)


def feasibility(model):
    """Constraint violations of a grouped model: per-mode orthogonality
    residuals, the weight-sum defect, and the worst bound violation."""
    group = model.group
    if group is None:
        raise ConfigError("feasibility needs a grouped model")
    p = group_weights(model)
    orth = {}
    for gamma in group.modes_of_interest:
        basis = common_factor(model, gamma)
        stack = np.hstack([model.lr_terms[i].factors[gamma] for i in range(group.n_objects)])
        orth[gamma] = float(np.linalg.norm(basis.T @ stack))
    return {
        "orthogonality": orth,
        "weight_sum_error": float(abs(p.sum() - group.p_cum)),
        "bound_violation": float(max(0.0, (group.p_min - p).max())),
    }


# ---------------------------------------------------------------------------
# Lagrangian route


@dataclass
class MultiplierState:
    """Multipliers in stacking order mu..., lambda, theta, zeta....

    ``mu_hat``/``lam_hat`` hold the per-entry multipliers of the exact
    penalty form (value computation only); the scalar fields drive the
    relaxed form and the KKT systems.
    """

    mu: np.ndarray
    lam: float
    theta: float
    zeta: np.ndarray
    mu_hat: list | None = None
    lam_hat: np.ndarray | None = None

    @classmethod
    def zeros(cls, group):
        return cls(
            mu=np.zeros(len(group.modes_of_interest)),
            lam=0.0,
            theta=0.0,
            zeta=np.zeros(group.n_objects),
        )

    def stack(self):
        return np.concatenate([self.mu, [self.lam, self.theta], self.zeta])

    @classmethod
    def from_stack(cls, tau, group):
        m = len(group.modes_of_interest)
        n = group.n_objects
        if tau.size != m + 2 + n:
            raise ConfigError("multiplier vector has the wrong length")
        return cls(mu=tau[:m].copy(), lam=float(tau[m]), theta=float(tau[m + 1]),
                   zeta=tau[m + 2:].copy())


def _stacked_individual(model, gamma):
    group = model.group
    return np.hstack([model.lr_terms[i].factors[gamma] for i in range(group.n_objects)])


def _offdiag_structural(model):
    """Off-diagonal of the group-mode factor.  Frozen by construction in
    the shipped builders, so this evaluates to an exact zero matrix; kept
    explicit so the penalty value follows its definition."""
    gmode = model.order - 1
    if model.group.flavor == "gtld":
        q = model.tucker_terms[0].factors[gmode].copy()
        np.fill_diagonal(q, 0.0)
        return q
    n = model.group.n_objects
    return np.zeros((n, n))


def constraint_values(model):
    """Constraint functionals in stacking order.

    mu_gamma : 0.5 * ||U_gamma^T C_gamma||_F^2   (stacked individual factors)
    lambda   : 0.5 * ||offdiag(Q_d)||_F^2
    theta    : sum(p) - p_cum
    zeta_i   : -(p_i - p_min)
    """
    group = model.group
    if group is None:
        raise ConfigError("constraint_values needs a grouped model")
    p = group_weights(model)
    vals = []
    for gamma in group.modes_of_interest:
        basis = common_factor(model, gamma)
        vals.append(0.5 * np.linalg.norm(basis.T @ _stacked_individual(model, gamma)) ** 2)
    q = _offdiag_structural(model)
    vals.append(0.5 * np.linalg.norm(q) ** 2)
    vals.append(p.sum() - group.p_cum)
    vals.extend(-(p - group.p_min))
    return np.asarray(vals)


def _weight_slice(model, layout):
    gmode = model.order - 1
    if model.group.flavor == "glro":
        slot = layout.find("lr_vector", len(model.lr_terms) - 1, gmode)
    else:
        slot = layout.find("tucker_diag", 0, gmode)
    return layout.slice_of(slot)


def constraint_jacobian(model, layout=None):
    """Columns of constraint-functional gradients, one per multiplier, in
    stacking order.  The lambda column is identically zero under the
    frozen parameterization (no free off-diagonal entries exist)."""
    group = model.group
    if group is None:
        raise ConfigError("constraint_jacobian needs a grouped model")
    layout = layout_of(model) if layout is None else layout
    n = layout.total
    n_ind = group.n_objects
    cols = []

    for gamma in group.modes_of_interest:
        basis = common_factor(model, gamma)
        stack = _stacked_individual(model, gamma)
        col = np.zeros(n)
        proj = basis @ (basis.T @ stack)
        start = 0
        for i in range(n_ind):
            t = model.lr_terms[i]
            width = t.rank
            slot = layout.find("lr_factor", i, gamma)
            col[layout.slice_of(slot)] = np.ravel(proj[:, start:start + width], order="F")
            start += width
        common_grad = stack @ (stack.T @ basis)
        if group.flavor == "glro":
            slot = layout.find("lr_factor", n_ind, gamma)
        else:
            slot = layout.find("tucker_factor", 0, gamma)
        col[layout.slice_of(slot)] = np.ravel(common_grad, order="F")
        cols.append(col)

    cols.append(np.zeros(n))  # lambda: structurally frozen off-diagonal

    psl = _weight_slice(model, layout)
    col = np.zeros(n)
    col[psl] = 1.0
    cols.append(col)

    for i in range(n_ind):
        col = np.zeros(n)
        seg = np.zeros(n_ind)
        seg[i] = -1.0
        col[psl] = seg
        cols.append(col)
    return np.column_stack(cols)


def penalty_value(model, multipliers, form="relaxed"):
    """Value of the constraint penalty g(x) for the given multipliers.

    The relaxed form is the multiplier-weighted sum of the scalar
    constraint functionals; the exact form scores the orthogonality and
    off-diagonal residuals against per-entry multiplier matrices instead.
    """
    group = model.group
    if group is None:
        raise ConfigError("penalty_value needs a grouped model")
    vals = constraint_values(model)
    if form == "relaxed":
        return float(multipliers.stack() @ vals)
    if form != "exact":
        raise ConfigError(f"unknown penalty form {form!r}")
    p = group_weights(model)
    total = multipliers.theta * (p.sum() - group.p_cum)
    total += multipliers.zeta @ (-(p - group.p_min))
    mu_hat = multipliers.mu_hat or []
    for j, gamma in enumerate(group.modes_of_interest):
        if j >= len(mu_hat) or mu_hat[j] is None:
            continue
        basis = common_factor(model, gamma)
        total += float(np.sum(mu_hat[j] * (basis.T @ _stacked_individual(model, gamma))))
    if multipliers.lam_hat is not None:
        total += float(np.sum(multipliers.lam_hat * _offdiag_structural(model)))
    return float(total)


def penalty_gradient(model, multipliers, layout=None):
    """Gradient of the relaxed penalty with respect to the packed free
    parameters: the constraint Jacobian against the stacked multipliers."""
    return constraint_jacobian(model, layout) @ multipliers.stack()


# ---------------------------------------------------------------------------
# bordered saddle solve


def bordered_solve(hess_apply, cons_cols, rhs_top, rhs_bot, tol=1e-10, maxiter=None,
                   regularization=1e-10):
    """Solve the symmetric saddle system

        [ H   G ] [dx  ]   [rhs_top]
        [ G^T 0 ] [dtau] = [rhs_bot]

    matrix-free (``hess_apply`` applies H; ``cons_cols`` holds the columns
    of G) with MINRES.  A singular or stagnating solve is retried once
    with a small diagonal regularization; a second failure raises.
    Returns ``(dx, dtau, info)`` where info carries the achieved residual.
    """
    cons_cols = np.atleast_2d(np.asarray(cons_cols, dtype=float))
    n = rhs_top.size
    m = cons_cols.shape[1] if cons_cols.size else 0
    if cons_cols.size and cons_cols.shape[0] != n:
        raise ConfigError("constraint columns must match the parameter count")
    rhs = np.concatenate([rhs_top, rhs_bot])
    if rhs.size != n + m:
        raise ConfigError("rhs_bot must hold one entry per constraint column")

    def matvec_full(v, shift=0.0):
        dx, dt = v[:n], v[n:]
        top = hess_apply(dx) + (cons_cols @ dt if m else 0.0) + shift * dx
        bot = (cons_cols.T @ dx if m else np.zeros(0)) + shift * dt
        return np.concatenate([top, bot])

    maxiter = 10 * (n + m) if maxiter is None else maxiter

    def attempt(shift):
        op = LinearOperator((n + m, n + m), matvec=lambda v: matvec_full(v, shift))
        sol, flag = minres(op, rhs, rtol=tol, maxiter=maxiter)
        res = np.linalg.norm(matvec_full(sol, shift) - rhs)
        scale = max(np.linalg.norm(rhs), 1.0)
        return sol, flag, res / scale

    # Iterates that ran out of budget are still usable Newton directions as
    # long as they made real progress on the residual; callers damp the step.
    acceptable = max(tol * 100, 1e-2)
    sol, flag, rel = attempt(0.0)
    used_shift = 0.0
    if not np.isfinite(rel) or rel > acceptable:
        sol, flag, rel = attempt(regularization)
        used_shift = regularization
        if not np.isfinite(rel) or rel > 0.5:
            raise NumericalError(
                f"bordered solve failed even with regularization (flag={flag}, rel={rel:.3e})"
            )
    info = {
        "relative_residual": float(rel),
        "regularization": used_shift,
        "converged": bool(rel <= 1e-8),
    }
    return sol[:n], sol[n:], info
