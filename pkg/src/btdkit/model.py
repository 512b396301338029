"""Block-term tensor models: mixed Tucker and (L_r, 1) terms.

A model is a sum of Tucker terms and (L_r, 1) terms over a fixed shape
``dims = (n_1, ..., n_d)``:

* a Tucker term is ``core x_1 A_1 x_2 ... x_d A_d``;
* an (L_r, 1) term has full factor matrices (``n_k x L``) on its first
  ``P`` modes and a single vector on each remaining mode, replicated ``L``
  times so the term stays a sum of ``L`` rank-1 components that share
  their trailing vectors.

Group-structured models tie several such terms to a population of ``N``
objects observed along the last mode:

* the low-rank-overlap flavor uses ``N`` individual (L_r, 1) terms whose
  last-mode vectors are frozen at the canonical basis vectors ``e_i``,
  plus one common (L_r, 1) term whose last-mode vector ``p`` holds the
  group weights;
* the Tucker-flavored variant replaces the common term by a Tucker term
  whose last-mode factor is ``diag(p)`` (only the diagonal is free).

Free parameters are packed into a single flat vector: all (L_r, 1) blocks
first (term-major, mode-inner, frozen vectors skipped), then Tucker factor
blocks, then Tucker cores; matrices are vectorized column-major.
Models are treated as immutable values: every operation that changes
parameters returns a new model.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .tensor_ops import cp_reconstruct, multi_mode_multiply

__all__ = [
    "LrTerm",
    "TuckerTerm",
    "GroupSpec",
    "BlockTermModel",
    "ParamSlot",
    "ParamLayout",
    "layout_of",
    "pack",
    "unpack",
    "build_lr_term",
    "build_tucker_term",
    "build_tld",
    "build_glro",
    "build_gtld",
    "reconstruct",
    "init_random",
    "group_weights",
    "common_factor",
]


@dataclass
class LrTerm:
    """One (L_r, 1) term: ``factors`` on modes ``0..P-1``, one vector per
    remaining mode.  ``vector_free[j]`` is False where the vector is a
    structural constant (e.g. a canonical basis vector) excluded from the
    parameter vector."""

    factors: tuple[np.ndarray, ...]
    vectors: tuple[np.ndarray, ...]
    vector_free: tuple[bool, ...]

    def __post_init__(self):
        self.factors = tuple(np.asarray(f, dtype=float) for f in self.factors)
        self.vectors = tuple(np.asarray(v, dtype=float) for v in self.vectors)
        self.vector_free = tuple(bool(b) for b in self.vector_free)
        if not self.factors:
            raise ConfigError("(L_r,1) term needs at least one full-factor mode")
        if len(self.vector_free) != len(self.vectors):
            raise ConfigError("vector_free must match vectors")
        cols = {f.shape[1] for f in self.factors}
        if len(cols) != 1:
            raise ConfigError(f"(L_r,1) factors disagree on column count: {cols}")

    @property
    def n_full_modes(self):
        return len(self.factors)

    @property
    def order(self):
        return len(self.factors) + len(self.vectors)

    @property
    def rank(self):
        return self.factors[0].shape[1]

    def expanded_factor(self, k):
        """Factor matrix of mode ``k`` with compact vectors replicated to
        the term's column count."""
        if k < self.n_full_modes:
            return self.factors[k]
        v = self.vectors[k - self.n_full_modes]
        return np.tile(v[:, None], (1, self.rank))

    def expanded_factors(self):
        return [self.expanded_factor(k) for k in range(self.order)]


@dataclass
class TuckerTerm:
    """One Tucker term.  Modes listed in ``diag_modes`` carry a square
    diagonal factor of which only the diagonal is a free parameter; the
    factor is stored as the full (diagonal) matrix."""

    core: np.ndarray
    factors: tuple[np.ndarray, ...]
    diag_modes: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        self.core = np.asarray(self.core, dtype=float)
        self.factors = tuple(np.asarray(a, dtype=float) for a in self.factors)
        self.diag_modes = frozenset(int(k) for k in self.diag_modes)
        if self.core.ndim != len(self.factors):
            raise ConfigError("Tucker core order must match factor count")
        for k, a in enumerate(self.factors):
            if a.shape[1] != self.core.shape[k]:
                raise ConfigError(
                    f"mode-{k} factor has {a.shape[1]} columns, core expects {self.core.shape[k]}"
                )
            if k in self.diag_modes and a.shape[0] != a.shape[1]:
                raise ConfigError(f"diagonal-only factor at mode {k} must be square")

    @property
    def order(self):
        return len(self.factors)

    def factor_kind(self, k):
        return "diag" if k in self.diag_modes else "matrix"


@dataclass(frozen=True)
class GroupSpec:
    """Constants of the group structure and its feasible set.

    ``modes_of_interest`` lists the modes (within the full-factor range)
    whose individual factors are constrained orthogonal to the common
    subspace; the group mode is always the last mode of the tensor.  The
    weight vector ``p`` itself lives in the model, the spec only pins its
    feasible set: ``sum(p) == p_cum`` and ``p >= p_min > 0`` entrywise.
    """

    n_objects: int
    flavor: str
    modes_of_interest: tuple[int, ...] = ()
    p_cum: float | None = None
    p_min: float | None = None

    def __post_init__(self):
        if self.flavor not in ("glro", "gtld"):
            raise ConfigError(f"unknown group flavor {self.flavor!r}")
        if self.n_objects < 1:
            raise ConfigError("n_objects must be positive")
        object.__setattr__(self, "modes_of_interest",
                           tuple(int(g) for g in self.modes_of_interest))
        p_cum = float(self.n_objects) if self.p_cum is None else float(self.p_cum)
        p_min = 0.01 * p_cum / self.n_objects if self.p_min is None else float(self.p_min)
        object.__setattr__(self, "p_cum", p_cum)
        object.__setattr__(self, "p_min", p_min)
        if self.p_min <= 0.0:
            raise ConfigError("p_min must be positive")
        if self.n_objects * self.p_min > self.p_cum:
            raise ConfigError("p_min too large for p_cum: feasible set is empty")


@dataclass
class BlockTermModel:
    """A sum of Tucker terms and (L_r, 1) terms over a fixed shape."""

    dims: tuple[int, ...]
    tucker_terms: list[TuckerTerm]
    lr_terms: list[LrTerm]
    group: GroupSpec | None = None

    def __post_init__(self):
        self.dims = tuple(int(n) for n in self.dims)
        d = len(self.dims)
        for t in self.tucker_terms:
            if t.order != d:
                raise ConfigError("Tucker term order must match dims")
            for k, a in enumerate(t.factors):
                if a.shape[0] != self.dims[k]:
                    raise ConfigError(
                        f"Tucker factor rows {a.shape[0]} != dim {self.dims[k]} at mode {k}"
                    )
        full_counts = {t.n_full_modes for t in self.lr_terms}
        if len(full_counts) > 1:
            raise ConfigError("(L_r,1) terms must share their full-factor mode count")
        for t in self.lr_terms:
            if t.order != d:
                raise ConfigError("(L_r,1) term order must match dims")
            for k in range(d):
                rows = t.factors[k].shape[0] if k < t.n_full_modes else t.vectors[k - t.n_full_modes].shape[0]
                if rows != self.dims[k]:
                    raise ConfigError(f"(L_r,1) mode-{k} size {rows} != dim {self.dims[k]}")

    @property
    def order(self):
        return len(self.dims)

    @property
    def n_full_modes(self):
        if not self.lr_terms:
            return None
        return self.lr_terms[0].n_full_modes


# ---------------------------------------------------------------------------
# parameter packing


@dataclass(frozen=True)
class ParamSlot:
    """One contiguous block of the packed parameter vector."""

    kind: str  # 'lr_factor' | 'lr_vector' | 'tucker_factor' | 'tucker_diag' | 'tucker_core'
    term: int
    mode: int  # -1 for cores
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def stop(self):
        return self.offset + self.size


@dataclass(frozen=True)
class ParamLayout:
    dims: tuple[int, ...]
    slots: tuple[ParamSlot, ...]

    @property
    def total(self):
        return self.slots[-1].stop if self.slots else 0

    def slice_of(self, slot):
        return slice(slot.offset, slot.stop)

    def find(self, kind, term, mode=-1):
        for s in self.slots:
            if s.kind == kind and s.term == term and s.mode == mode:
                return s
        raise KeyError((kind, term, mode))


def layout_of(model):
    """Enumerate the free-parameter slots of ``model`` in packing order:
    (L_r,1) blocks term-major/mode-inner with frozen vectors skipped, then
    Tucker factor blocks, then Tucker cores."""
    slots = []
    offset = 0

    def push(kind, term, mode, shape):
        nonlocal offset
        slot = ParamSlot(kind, term, mode, tuple(int(n) for n in shape), offset)
        slots.append(slot)
        offset = slot.stop

    for s, t in enumerate(model.lr_terms):
        for k in range(t.order):
            if k < t.n_full_modes:
                push("lr_factor", s, k, t.factors[k].shape)
            elif t.vector_free[k - t.n_full_modes]:
                push("lr_vector", s, k, t.vectors[k - t.n_full_modes].shape)
    for m, t in enumerate(model.tucker_terms):
        for k in range(t.order):
            if t.factor_kind(k) == "diag":
                push("tucker_diag", m, k, (t.factors[k].shape[0],))
            else:
                push("tucker_factor", m, k, t.factors[k].shape)
    for m, t in enumerate(model.tucker_terms):
        push("tucker_core", m, -1, t.core.shape)
    return ParamLayout(model.dims, tuple(slots))


def _slot_value(model, slot):
    if slot.kind == "lr_factor":
        return model.lr_terms[slot.term].factors[slot.mode]
    if slot.kind == "lr_vector":
        t = model.lr_terms[slot.term]
        return t.vectors[slot.mode - t.n_full_modes]
    if slot.kind == "tucker_factor":
        return model.tucker_terms[slot.term].factors[slot.mode]
    if slot.kind == "tucker_diag":
        return np.diag(model.tucker_terms[slot.term].factors[slot.mode])
    if slot.kind == "tucker_core":
        return model.tucker_terms[slot.term].core
    raise KeyError(slot.kind)


def pack(model, layout=None):
    """Flatten the free parameters of ``model`` into one vector (matrices
    column-major, in layout order)."""
    layout = layout_of(model) if layout is None else layout
    out = np.empty(layout.total)
    for slot in layout.slots:
        out[layout.slice_of(slot)] = np.ravel(_slot_value(model, slot), order="F")
    return out


def unpack(x, template, layout=None):
    """Rebuild a model from a packed vector, taking every frozen structure
    from ``template``.  Inverse of :func:`pack` on the free part."""
    layout = layout_of(template) if layout is None else layout
    x = np.asarray(x, dtype=float)
    if x.shape != (layout.total,):
        raise ConfigError(f"parameter vector has size {x.shape}, layout expects {layout.total}")

    lr_terms = []
    for s, t in enumerate(template.lr_terms):
        factors = list(t.factors)
        vectors = list(t.vectors)
        for k in range(t.order):
            if k < t.n_full_modes:
                slot = layout.find("lr_factor", s, k)
                factors[k] = np.reshape(x[layout.slice_of(slot)], slot.shape, order="F")
            elif t.vector_free[k - t.n_full_modes]:
                slot = layout.find("lr_vector", s, k)
                vectors[k - t.n_full_modes] = x[layout.slice_of(slot)].copy()
        lr_terms.append(LrTerm(tuple(factors), tuple(vectors), t.vector_free))

    tucker_terms = []
    for m, t in enumerate(template.tucker_terms):
        factors = list(t.factors)
        for k in range(t.order):
            if t.factor_kind(k) == "diag":
                slot = layout.find("tucker_diag", m, k)
                factors[k] = np.diag(x[layout.slice_of(slot)])
            else:
                slot = layout.find("tucker_factor", m, k)
                factors[k] = np.reshape(x[layout.slice_of(slot)], slot.shape, order="F")
        slot = layout.find("tucker_core", m, -1)
        core = np.reshape(x[layout.slice_of(slot)], slot.shape, order="F")
        tucker_terms.append(TuckerTerm(core, tuple(factors), t.diag_modes))

    return BlockTermModel(template.dims, tucker_terms, lr_terms, template.group)


# ---------------------------------------------------------------------------
# builders


def build_lr_term(dims, rank, n_full_modes, frozen_vectors=None):
    """Zero-initialized (L_r,1) term.  ``frozen_vectors`` maps a mode index
    (>= n_full_modes) to the constant vector stored there."""
    dims = tuple(int(n) for n in dims)
    if not 1 <= n_full_modes <= len(dims) - 1:
        raise ConfigError("need 1 <= n_full_modes <= d-1")
    frozen_vectors = dict(frozen_vectors or {})
    factors = tuple(np.zeros((dims[k], rank)) for k in range(n_full_modes))
    vectors, free = [], []
    for k in range(n_full_modes, len(dims)):
        if k in frozen_vectors:
            v = np.asarray(frozen_vectors[k], dtype=float)
            if v.shape != (dims[k],):
                raise ConfigError(f"frozen vector at mode {k} has wrong length")
            vectors.append(v)
            free.append(False)
        else:
            vectors.append(np.zeros(dims[k]))
            free.append(True)
    return LrTerm(factors, tuple(vectors), tuple(free))


def build_tucker_term(dims, ranks, diag_modes=()):
    """Zero-initialized Tucker term (diagonal-only factors start at I)."""
    dims = tuple(int(n) for n in dims)
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != len(dims):
        raise ConfigError("need one Tucker rank per mode")
    diag_modes = frozenset(int(k) for k in diag_modes)
    for k, (n, r) in enumerate(zip(dims, ranks)):
        if r < 1 or r > n:
            raise ConfigError(f"Tucker rank {r} out of range for mode {k} of size {n}")
    for k in diag_modes:
        if ranks[k] != dims[k]:
            raise ConfigError("diagonal-only factors require rank == dim on their mode")
    factors = tuple(
        np.eye(dims[k]) if k in diag_modes else np.zeros((dims[k], ranks[k]))
        for k in range(len(dims))
    )
    return TuckerTerm(np.zeros(ranks), factors, diag_modes)


def build_tld(dims, lr_ranks, n_full_modes, tucker_ranks=()):
    """Unconstrained mixed model: ``len(lr_ranks)`` (L_r,1) terms plus one
    Tucker term per entry of ``tucker_ranks`` (each entry a rank tuple)."""
    lr = [build_lr_term(dims, L, n_full_modes) for L in lr_ranks]
    tt = [build_tucker_term(dims, r) for r in tucker_ranks]
    return BlockTermModel(tuple(dims), tt, lr, group=None)


def _check_group_dims(dims, group, n_full_modes):
    if dims[-1] != group.n_objects:
        raise ConfigError(
            f"group mode size {dims[-1]} must equal n_objects {group.n_objects}"
        )
    for g in group.modes_of_interest:
        if not 0 <= g < n_full_modes:
            raise ConfigError(
                f"mode of interest {g} outside the full-factor range 0..{n_full_modes - 1}"
            )


def build_glro(dims, lr_ranks, n_full_modes, group):
    """Group model with low-rank overlap: one (L_r,1) term per object with
    its last-mode vector frozen at e_i, plus a common (L_r,1) term whose
    free last-mode vector carries the group weights (initialized feasible).

    ``lr_ranks`` has ``n_objects + 1`` entries, the common term's last.
    """
    dims = tuple(int(n) for n in dims)
    group = replace(group, flavor="glro")
    _check_group_dims(dims, group, n_full_modes)
    n = group.n_objects
    if len(lr_ranks) != n + 1:
        raise ConfigError(f"lr_ranks must have n_objects+1 = {n + 1} entries")
    gmode = len(dims) - 1
    terms = []
    for i in range(n):
        e_i = np.zeros(n)
        e_i[i] = 1.0
        terms.append(build_lr_term(dims, lr_ranks[i], n_full_modes, {gmode: e_i}))
    common = build_lr_term(dims, lr_ranks[-1], n_full_modes)
    common.vectors[-1][:] = group.p_cum / n
    terms.append(common)
    return BlockTermModel(dims, [], terms, group)


def build_gtld(dims, lr_ranks, n_full_modes, tucker_ranks, group):
    """Group model with a Tucker common term: the Tucker factor on the
    group mode is diag(p) (diagonal free, initialized feasible), and each
    object keeps an individual (L_r,1) term frozen at e_i.

    ``tucker_ranks`` covers modes ``0..d-2``; the group-mode rank is N.
    """
    dims = tuple(int(n) for n in dims)
    group = replace(group, flavor="gtld")
    _check_group_dims(dims, group, n_full_modes)
    n = group.n_objects
    if len(lr_ranks) != n:
        raise ConfigError(f"lr_ranks must have n_objects = {n} entries")
    tucker_ranks = tuple(int(r) for r in tucker_ranks)
    if len(tucker_ranks) == len(dims) - 1:
        tucker_ranks = tucker_ranks + (n,)
    if len(tucker_ranks) != len(dims) or tucker_ranks[-1] != n:
        raise ConfigError("tucker_ranks must cover modes 0..d-2 (group-mode rank is N)")
    gmode = len(dims) - 1
    common = build_tucker_term(dims, tucker_ranks, diag_modes=(gmode,))
    common.factors[gmode][:] = np.eye(n) * (group.p_cum / n)
    terms = []
    for i in range(n):
        e_i = np.zeros(n)
        e_i[i] = 1.0
        terms.append(build_lr_term(dims, lr_ranks[i], n_full_modes, {gmode: e_i}))
    return BlockTermModel(dims, [common], terms, group)


# ---------------------------------------------------------------------------
# evaluation and initialization


def reconstruct(model):
    """Dense tensor represented by ``model``."""
    out = np.zeros(model.dims)
    for t in model.tucker_terms:
        out += multi_mode_multiply(t.core, t.factors)
    for t in model.lr_terms:
        out += cp_reconstruct(t.expanded_factors(), model.dims)
    return out


def _weight_slot(model, layout):
    """Slot holding the group weights, or None for ungrouped models."""
    if model.group is None:
        return None
    gmode = model.order - 1
    if model.group.flavor == "glro":
        return layout.find("lr_vector", len(model.lr_terms) - 1, gmode)
    return layout.find("tucker_diag", 0, gmode)


def init_random(template, seed, scale=1.0):
    """Fresh model with i.i.d. standard-normal free parameters (times
    ``scale``), drawn slot by slot in layout order so the draw is
    deterministic per seed.  Group weights are not randomized: they start
    at the feasible uniform point."""
    layout = layout_of(template)
    rng = np.random.default_rng(seed)
    x = np.empty(layout.total)
    pslot = _weight_slot(template, layout)
    for slot in layout.slots:
        block = rng.standard_normal(slot.size) * scale
        x[layout.slice_of(slot)] = block
    if pslot is not None:
        x[layout.slice_of(pslot)] = template.group.p_cum / template.group.n_objects
    return unpack(x, template, layout)


def group_weights(model):
    """Current group-weight vector p of a grouped model."""
    if model.group is None:
        raise ConfigError("model has no group structure")
    gmode = model.order - 1
    if model.group.flavor == "glro":
        return model.lr_terms[-1].vectors[gmode - model.lr_terms[-1].n_full_modes].copy()
    return np.diag(model.tucker_terms[0].factors[gmode]).copy()


def common_factor(model, mode):
    """Factor matrix of the common (shared) term at ``mode``: the common
    (L_r,1) term's factor for the low-rank-overlap flavor, the Tucker
    factor otherwise."""
    if model.group is None:
        raise ConfigError("model has no group structure")
    if model.group.flavor == "glro":
        return model.lr_terms[-1].expanded_factor(mode)
    return model.tucker_terms[0].factors[mode]
