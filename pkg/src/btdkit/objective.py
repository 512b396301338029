"""Nonlinear least-squares machinery for block-term models.

For a model with packed parameter vector ``x`` and reconstruction ``F(x)``,
the objective is ``f(x) = 0.5 * ||F(x) - T||_F^2``.  ``F`` is multilinear
in the parameter blocks, which keeps every derived quantity structured:

* the Jacobian applied to a direction is a sum of reconstructions with one
  block replaced by its direction;
* the Gauss-Newton product ``J^T J v`` never touches a tensor-sized
  intermediate: each (output block, direction block) pair reduces to small
  factor cross-Gram matrices via the identity
  ``(A (x) B)^T (U (.) V) = (A^T U) (.) (B^T V)``
  (Kronecker versus column-wise Kronecker), plus mode products on the
  small Tucker cores;
* the curvature correction ``Q v`` (exact Hessian minus Gauss-Newton) only
  couples blocks of the same term and is evaluated by contracting the
  dense residual against reconstructions with one *other* block of the
  term replaced by its direction.

Replicated vectors and diagonal-only factors enter through their obvious
chain rules: replication sums adjoint columns, diagonal extraction takes
the adjoint's diagonal.

All operators are deterministic and allocation-light; Hessian operators
snapshot the state they were created at, so they stay valid after the
problem moves to a new iterate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .model import layout_of, pack, reconstruct, unpack
from .tensor_ops import (
    cp_reconstruct,
    frobenius_norm,
    mode_multiply,
    mttkrp,
    multi_mode_multiply,
    tensorize,
    unfold,
    vectorize,
)

__all__ = ["ResidualProblem", "HessianOperator"]


@dataclass
class _Block:
    """One free parameter block of a term: where it sits in x and how its
    matrix form maps to free parameters."""

    mode: int  # -1 for a Tucker core
    chain: str  # 'matrix' | 'vector' | 'diag' | 'core'
    sl: slice


@dataclass
class _Term:
    """Uniform per-term view: expanded factor matrices (vectors replicated,
    diagonals materialized) plus the core for Tucker terms."""

    kind: str  # 'lr' | 'tucker'
    factors: list
    core: np.ndarray | None
    blocks: list


@dataclass
class _Direction:
    """A structured tensor J_block * v_block: the owning term with one
    block swapped for its direction (CP form when core is None)."""

    term: int
    factors: list
    core: np.ndarray | None
    modified_mode: int | None  # None when the core is the modified block


class ResidualProblem:
    """State and derivatives of ``0.5 * ||F(x) - T||^2`` for one model
    template and one dense target."""

    def __init__(self, template, target):
        target = np.asarray(target, dtype=float)
        if target.shape != tuple(template.dims):
            raise ConfigError(
                f"target shape {target.shape} does not match model dims {template.dims}"
            )
        self.template = template
        self.target = target
        self.layout = layout_of(template)
        self.target_norm = frobenius_norm(target)
        self._x = None
        self.set_params(pack(template, self.layout))

    # -- state ------------------------------------------------------------

    @property
    def n_params(self):
        return self.layout.total

    def params(self):
        return self._x.copy()

    @property
    def model(self):
        return self._model

    def set_params(self, x):
        x = np.asarray(x, dtype=float)
        if self._x is not None and x.shape == self._x.shape and np.array_equal(x, self._x):
            return
        self._x = x.copy()
        self._model = unpack(x, self.template, self.layout)
        self._terms = self._build_terms(self._model)
        self._residual = reconstruct(self._model) - self.target
        self._grams = self._build_cross_grams(self._terms)

    def _build_terms(self, model):
        terms = []
        for s, t in enumerate(model.lr_terms):
            blocks = []
            for k in range(t.order):
                if k < t.n_full_modes:
                    slot = self.layout.find("lr_factor", s, k)
                    blocks.append(_Block(k, "matrix", self.layout.slice_of(slot)))
                elif t.vector_free[k - t.n_full_modes]:
                    slot = self.layout.find("lr_vector", s, k)
                    blocks.append(_Block(k, "vector", self.layout.slice_of(slot)))
            terms.append(_Term("lr", t.expanded_factors(), None, blocks))
        for m, t in enumerate(model.tucker_terms):
            blocks = []
            for k in range(t.order):
                if t.factor_kind(k) == "diag":
                    slot = self.layout.find("tucker_diag", m, k)
                    blocks.append(_Block(k, "diag", self.layout.slice_of(slot)))
                else:
                    slot = self.layout.find("tucker_factor", m, k)
                    blocks.append(_Block(k, "matrix", self.layout.slice_of(slot)))
            slot = self.layout.find("tucker_core", m, -1)
            blocks.append(_Block(-1, "core", self.layout.slice_of(slot)))
            terms.append(_Term("tucker", list(t.factors), t.core, blocks))
        return terms

    @staticmethod
    def _build_cross_grams(terms):
        """grams[a][b][l] = factors_a[l].T @ factors_b[l] for every ordered
        term pair; these carry all cross-term coupling of J^T J."""
        n = len(terms)
        d = len(terms[0].factors) if terms else 0
        grams = [[None] * n for _ in range(n)]
        for a in range(n):
            for b in range(n):
                grams[a][b] = [terms[a].factors[l].T @ terms[b].factors[l] for l in range(d)]
        return grams

    # -- plain values -----------------------------------------------------

    def objective(self):
        return 0.5 * float(np.vdot(self._residual, self._residual))

    def residual(self):
        return self._residual

    def relative_residual(self):
        if self.target_norm == 0.0:
            return frobenius_norm(self._residual)
        return frobenius_norm(self._residual) / self.target_norm

    # -- first order ------------------------------------------------------

    def gradient(self):
        return self.jacobian_adjoint_apply(self._residual)

    def jacobian_adjoint_apply(self, w):
        """J(x)^T w for a dense tensor (or its vectorization) w."""
        w = np.asarray(w, dtype=float)
        if w.ndim == 1:
            w = tensorize(w, self.template.dims)
        out = np.zeros(self.n_params)
        for term in self._terms:
            self._dense_adjoint_into(term, w, out)
        return out

    def _dense_adjoint_into(self, term, w, out):
        if term.kind == "lr":
            for blk in term.blocks:
                m = mttkrp(w, term.factors, blk.mode)
                self._chain_into(out, blk, m)
            return
        transposed = [a.T for a in term.factors]
        core = term.core
        for blk in term.blocks:
            if blk.chain == "core":
                adj = multi_mode_multiply(w, transposed)
                out[blk.sl] += vectorize(adj)
            else:
                wt = multi_mode_multiply(w, transposed, skip=blk.mode)
                m = unfold(wt, blk.mode) @ unfold(core, blk.mode).T
                self._chain_into(out, blk, m)

    @staticmethod
    def _chain_into(out, blk, m, scale=1.0):
        if blk.chain == "matrix":
            out[blk.sl] += scale * np.ravel(m, order="F")
        elif blk.chain == "vector":
            out[blk.sl] += scale * m.sum(axis=1)
        elif blk.chain == "diag":
            out[blk.sl] += scale * np.diagonal(m)
        else:
            raise ConfigError(f"unexpected chain {blk.chain}")

    # -- directions -------------------------------------------------------

    def _expand_block_direction(self, term, blk, v):
        seg = v[blk.sl]
        if blk.chain == "matrix":
            f = term.factors[blk.mode]
            return np.reshape(seg, f.shape, order="F")
        if blk.chain == "vector":
            cols = term.factors[blk.mode].shape[1]
            return np.tile(seg[:, None], (1, cols))
        if blk.chain == "diag":
            return np.diag(seg)
        if blk.chain == "core":
            return np.reshape(seg, term.core.shape, order="F")
        raise ConfigError(f"unexpected chain {blk.chain}")

    def _direction_terms(self, v):
        dirs = []
        for idx, term in enumerate(self._terms):
            for blk in term.blocks:
                d = self._expand_block_direction(term, blk, v)
                if blk.chain == "core":
                    dirs.append(_Direction(idx, list(term.factors), d, None))
                else:
                    factors = list(term.factors)
                    factors[blk.mode] = d
                    dirs.append(_Direction(idx, factors, term.core, blk.mode))
        return dirs

    def jacobian_apply(self, v):
        """J(x) v as the vectorization of the summed linearized terms."""
        v = np.asarray(v, dtype=float)
        out = np.zeros(self.template.dims)
        for direction in self._direction_terms(v):
            if direction.core is None:
                out += cp_reconstruct(direction.factors, self.template.dims)
            else:
                out += multi_mode_multiply(direction.core, direction.factors)
        return vectorize(out)

    # -- Gauss-Newton product ----------------------------------------------

    def gauss_newton_apply(self, v):
        """(J^T J) v through factor cross-Grams; no tensor-sized temporaries."""
        v = np.asarray(v, dtype=float)
        out = np.zeros(self.n_params)
        for direction in self._direction_terms(v):
            for t1_idx, t1 in enumerate(self._terms):
                cached = self._grams[direction.term][t1_idx]
                ps = [
                    direction.factors[l].T @ t1.factors[l]
                    if l == direction.modified_mode
                    else cached[l]
                    for l in range(len(cached))
                ]
                self._structured_adjoint_into(direction, t1, ps, out)
        return out

    def _structured_adjoint_into(self, direction, t1, ps, out):
        """Adjoint of the structured tensor ``direction`` against every free
        block of ``t1``; ps[l] = direction.factors[l].T @ t1.factors[l]."""
        if t1.kind == "lr":
            for blk in t1.blocks:
                k = blk.mode
                if direction.core is None:
                    had = _hadamard_excluding(ps, k)
                    m = direction.factors[k] @ had
                else:
                    m = direction.factors[k] @ mttkrp(direction.core, ps, k)
                self._chain_into(out, blk, m)
            return
        for blk in t1.blocks:
            if blk.chain == "core":
                if direction.core is None:
                    adj = cp_reconstruct([p.T for p in ps])
                else:
                    adj = multi_mode_multiply(direction.core, [p.T for p in ps])
                out[blk.sl] += vectorize(adj)
            else:
                k = blk.mode
                if direction.core is None:
                    m = direction.factors[k] @ mttkrp(t1.core, [p.T for p in ps], k).T
                else:
                    small = multi_mode_multiply(direction.core, [p.T for p in ps], skip=k)
                    m = direction.factors[k] @ unfold(small, k) @ unfold(t1.core, k).T
                self._chain_into(out, blk, m)

    # -- curvature correction ----------------------------------------------

    def curvature_apply(self, v):
        """Q v = (H - J^T J) v: second-derivative coupling, which only ties
        blocks within one term, contracted against the dense residual."""
        v = np.asarray(v, dtype=float)
        z = self._residual
        out = np.zeros(self.n_params)
        for term in self._terms:
            dirs = {blk.mode: self._expand_block_direction(term, blk, v) for blk in term.blocks}
            if term.kind == "lr":
                for blk in term.blocks:
                    m = None
                    for k2, d2 in dirs.items():
                        if k2 == blk.mode:
                            continue
                        factors = list(term.factors)
                        factors[k2] = d2
                        c = mttkrp(z, factors, blk.mode)
                        m = c if m is None else m + c
                    if m is not None:
                        self._chain_into(out, blk, m)
            else:
                self._tucker_curvature_into(term, dirs, z, out)
        return out

    def _tucker_curvature_into(self, term, dirs, z, out):
        d = len(term.factors)
        transposed = [a.T for a in term.factors]
        core_dir = dirs.get(-1)
        for blk in term.blocks:
            if blk.chain == "core":
                acc = np.zeros(term.core.shape)
                for k2 in range(d):
                    if k2 not in dirs:
                        continue
                    mats = list(transposed)
                    mats[k2] = dirs[k2].T
                    acc += multi_mode_multiply(z, mats)
                out[blk.sl] += vectorize(acc)
                continue
            k1 = blk.mode
            m = np.zeros(term.factors[k1].shape)
            for k2 in range(d):
                if k2 == k1 or k2 not in dirs:
                    continue
                mats = list(transposed)
                mats[k2] = dirs[k2].T
                small = multi_mode_multiply(z, mats, skip=k1)
                m += unfold(small, k1) @ unfold(term.core, k1).T
            if core_dir is not None:
                small = multi_mode_multiply(z, transposed, skip=k1)
                m += unfold(small, k1) @ unfold(core_dir, k1).T
            self._chain_into(out, blk, m)

    # -- Hessian operators ---------------------------------------------------

    def hessian_apply(self, v, kind="gauss_newton"):
        if kind == "gauss_newton":
            return self.gauss_newton_apply(v)
        if kind == "full":
            return self.gauss_newton_apply(v) + self.curvature_apply(v)
        raise ConfigError(f"unknown Hessian kind {kind!r}")

    def hessian_operator(self, kind="gauss_newton"):
        return HessianOperator(self, kind)


class HessianOperator:
    """Matrix-free Hessian at the iterate current when it was created.

    Snapshots the problem's internal state (term views, Grams, residual),
    so it keeps answering for its own iterate even after the underlying
    problem moves on.
    """

    def __init__(self, problem, kind):
        if kind not in ("gauss_newton", "full"):
            raise ConfigError(f"unknown Hessian kind {kind!r}")
        self.kind = kind
        self.n = problem.n_params
        self._frozen = _FrozenState(problem)

    @property
    def shape(self):
        return (self.n, self.n)

    def apply(self, v):
        if self.kind == "gauss_newton":
            return self._frozen.gauss_newton_apply(v)
        return self._frozen.gauss_newton_apply(v) + self._frozen.curvature_apply(v)

    __call__ = apply


class _FrozenState:
    """Shallow snapshot sharing ResidualProblem's apply methods."""

    def __init__(self, problem):
        self.template = problem.template
        self.layout = problem.layout
        self.n_params = problem.n_params
        self._terms = problem._terms
        self._grams = problem._grams
        self._residual = problem._residual

    gauss_newton_apply = ResidualProblem.gauss_newton_apply
    curvature_apply = ResidualProblem.curvature_apply
    _structured_adjoint_into = ResidualProblem._structured_adjoint_into
    _tucker_curvature_into = ResidualProblem._tucker_curvature_into
    _direction_terms = ResidualProblem._direction_terms
    _expand_block_direction = ResidualProblem._expand_block_direction
    _chain_into = staticmethod(ResidualProblem._chain_into)


def _hadamard_excluding(mats, skip):
    out = None
    for l, m in enumerate(mats):
        if l == skip:
            continue
        out = m.copy() if out is None else out * m
    if out is None:
        raise ConfigError("hadamard product over an empty set")
    return out
