"""Group-model analysis pipelines: subspace classification, contrast
clustering, and the partition-agreement metrics used to score both.

Classification fits one grouped model per class on the class's stacked
objects, takes the common factor on the mode of interest as the class
subspace (optionally rotated by FastICA within its span, then
orthonormalized), and assigns a new object to the class whose subspace
makes the smallest first principal angle with the object's own dominant
subspace on that mode.

Clustering fits a single grouped model across all objects, removes the
common part from every object slice, and runs agglomerative clustering on
pairwise distances between the remaining contrast features.

The partition metrics (adjusted Rand, adjusted mutual information,
Fowlkes-Mallows) are computed from contingency tables; ties and edge
cases follow the standard conventions so scores stay comparable across
tools.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import orth
from scipy.spatial.distance import pdist, squareform
from scipy.special import gammaln

from .errors import ConfigError
from .model import (
    GroupSpec,
    build_glro,
    build_gtld,
    common_factor,
    init_random,
)
from .optim import OptimizerConfig, minimize
from .tensor_ops import multi_mode_multiply, cp_reconstruct, unfold

__all__ = [
    "principal_angle",
    "ClassModel",
    "PipelineConfig",
    "fit_class_models",
    "classify",
    "fastica",
    "common_reconstruction",
    "contrast_features",
    "pairwise_distance",
    "DISTANCE_METRICS",
    "agglomerative",
    "cluster_labels",
    "adjusted_rand",
    "fowlkes_mallows",
    "adjusted_mutual_info",
    "accuracy",
    "confusion_matrix",
    "precision_recall_f1",
    "kfold_split",
]


# ---------------------------------------------------------------------------
# subspace comparison


def principal_angle(a, b):
    """First principal angle (radians) between the column spans of two
    matrices.  Inputs need not be orthonormal; zero subspaces are
    rejected."""
    qa = orth(np.asarray(a, dtype=float))
    qb = orth(np.asarray(b, dtype=float))
    if qa.shape[1] == 0 or qb.shape[1] == 0:
        raise ConfigError("principal_angle needs nonzero subspaces")
    s = np.linalg.svd(qa.T @ qb, compute_uv=False)
    cos_max = min(1.0, float(s[0])) if s.size else 0.0
    return float(np.arccos(cos_max))


# ---------------------------------------------------------------------------
# classification


@dataclass
class ClassModel:
    """Per-class subspace on the mode of interest."""

    label: object
    basis: np.ndarray  # orthonormal columns
    ica_converged: bool | None = None


@dataclass(frozen=True)
class PipelineConfig:
    """How class/group models are fitted inside the pipelines."""

    flavor: str = "gtld"
    r_common: int = 5
    r_individual: int = 1
    gamma: int = 0  # mode of interest
    n_iters: int = 10
    method: str = "als"
    constraint: str = "projected"
    seed: int = 0
    init_scale: float = 1.0
    use_ica: bool = False

    def __post_init__(self):
        if self.flavor not in ("glro", "gtld"):
            raise ConfigError(f"unknown flavor {self.flavor!r}")
        if self.r_common < 1 or self.r_individual < 1:
            raise ConfigError("ranks must be positive")


def _build_group_model(obj_dims, n_objects, cfg):
    """Grouped template for ``n_objects`` stacked objects of shape
    ``obj_dims``: every object mode carries full factors, ranks clamped to
    mode sizes where required."""
    dims = tuple(obj_dims) + (n_objects,)
    n_full = len(obj_dims)
    group = GroupSpec(n_objects=n_objects, flavor=cfg.flavor,
                      modes_of_interest=(cfg.gamma,))
    if cfg.flavor == "glro":
        ranks = [cfg.r_individual] * n_objects + [cfg.r_common]
        return build_glro(dims, ranks, n_full, group)
    tucker_ranks = [min(cfg.r_common, dims[k]) for k in range(n_full)]
    return build_gtld(dims, [cfg.r_individual] * n_objects, n_full, tucker_ranks, group)


def _fit_group_model(stack, cfg):
    n_objects = stack.shape[-1]
    template = _build_group_model(stack.shape[:-1], n_objects, cfg)
    model0 = init_random(template, cfg.seed, cfg.init_scale)
    norm = np.linalg.norm(stack.ravel())
    scaled = stack / norm if norm > 0 else stack
    opt = OptimizerConfig(method=cfg.method, max_iters=cfg.n_iters,
                          grad_tol=0.0, step_tol=0.0, record_gradient=False)
    return minimize(scaled, model0, opt, constraint=cfg.constraint)


def fit_class_models(objects, labels, cfg):
    """Fit one grouped model per class and return its (optionally
    ICA-refined) orthonormal common basis on the mode of interest.

    ``objects`` is a sequence of equally shaped tensors; ``labels`` their
    class labels.  Classes are processed in sorted label order so results
    and tie-breaking stay deterministic.
    """
    objects = [np.asarray(o, dtype=float) for o in objects]
    if len(objects) != len(labels):
        raise ConfigError("objects and labels must align")
    shapes = {o.shape for o in objects}
    if len(shapes) != 1:
        raise ConfigError(f"objects disagree on shape: {shapes}")
    out = []
    for label in sorted(set(labels)):
        members = [o for o, l in zip(objects, labels) if l == label]
        stack = np.stack(members, axis=-1)
        fit = _fit_group_model(stack, cfg)
        basis = common_factor(fit.model, cfg.gamma)
        converged = None
        if cfg.use_ica:
            basis, converged = fastica(basis, seed=cfg.seed)
        q = orth(basis)
        if q.shape[1] == 0:
            raise ConfigError(f"class {label!r} produced a zero common subspace")
        out.append(ClassModel(label=label, basis=q, ica_converged=converged))
    return out


def _object_basis(obj, gamma, rank):
    mat = unfold(np.asarray(obj, dtype=float), gamma)
    u, s, _ = np.linalg.svd(mat, full_matrices=False)
    keep = min(rank, int(np.sum(s > s[0] * 1e-12))) if s.size else 0
    if keep == 0:
        raise ConfigError("object has a zero unfolding; no subspace to compare")
    return u[:, :keep]


def classify(objects, class_models, gamma, r_object=None):
    """Winner-takes-all subspace classification.

    Each object is represented by the leading left singular vectors of its
    mode-``gamma`` unfolding (``r_object`` of them; defaults to the widest
    class basis) and assigned to the class with the smallest first
    principal angle.  Exact ties go to the earliest class in the given
    order.
    """
    if not class_models:
        raise ConfigError("classify needs at least one class model")
    r = r_object or max(cm.basis.shape[1] for cm in class_models)
    preds = []
    for obj in objects:
        zb = _object_basis(obj, gamma, r)
        angles = [principal_angle(zb, cm.basis) for cm in class_models]
        preds.append(class_models[int(np.argmin(angles))].label)
    return preds


# ---------------------------------------------------------------------------
# FastICA refinement


def fastica(mixtures, seed=0, max_iter=200, tol=1e-4):
    """Symmetric FastICA with a tanh contrast.

    ``mixtures`` has observations in rows and mixed channels in columns.
    Whitening deliberately skips mean-centering so the returned source
    matrix stays inside the column span of the input (the use here is
    rotating a subspace basis, where shifting would leak a mean direction
    into the span).  Returns ``(sources, converged)``.
    """
    x = np.asarray(mixtures, dtype=float)
    if x.ndim != 2:
        raise ConfigError("fastica expects a matrix")
    n, c = x.shape
    cov = (x.T @ x) / n
    evals, evecs = np.linalg.eigh(cov)
    keep = evals > max(evals[-1], 0.0) * 1e-12
    if not np.any(keep):
        raise ConfigError("fastica input has rank zero")
    ev = evals[keep]
    whitener = evecs[:, keep] / np.sqrt(ev)
    xw = x @ whitener  # n x c', identity covariance
    c_eff = xw.shape[1]

    rng = np.random.default_rng(seed)
    w = _sym_decorrelate(rng.standard_normal((c_eff, c_eff)))
    converged = False
    for _ in range(max_iter):
        wx = xw @ w.T
        gwx = np.tanh(wx)
        g_prime = np.mean(1.0 - gwx * gwx, axis=0)
        w_new = (gwx.T @ xw) / n - g_prime[:, None] * w
        w_new = _sym_decorrelate(w_new)
        delta = float(np.max(np.abs(np.abs(np.einsum("ij,ij->i", w_new, w)) - 1.0)))
        w = w_new
        if delta < tol:
            converged = True
            break
    return xw @ w.T, converged


def _sym_decorrelate(w):
    """(W W^T)^{-1/2} W."""
    s, u = np.linalg.eigh(w @ w.T)
    s = np.maximum(s, np.finfo(float).eps)
    return (u / np.sqrt(s)) @ u.T @ w


# ---------------------------------------------------------------------------
# contrast clustering


def common_reconstruction(model):
    """Dense reconstruction of the common (shared) part only."""
    if model.group is None:
        raise ConfigError("common_reconstruction needs a grouped model")
    if model.group.flavor == "gtld":
        t = model.tucker_terms[0]
        return multi_mode_multiply(t.core, t.factors)
    t = model.lr_terms[-1]
    return cp_reconstruct(t.expanded_factors(), model.dims)


def contrast_features(stack, model):
    """Vectorized residual slices: object slices of ``stack`` minus the
    common-part slices, one feature row per object."""
    stack = np.asarray(stack, dtype=float)
    if stack.shape != model.dims:
        raise ConfigError("stack shape must match the fitted model dims")
    diff = stack - common_reconstruction(model)
    return unfold(diff, stack.ndim - 1)


def fit_contrast_features(objects, cfg):
    """Convenience wrapper: stack ``objects``, fit one grouped model, and
    return the contrast features of the fit (plus the fit itself)."""
    stack = np.stack([np.asarray(o, dtype=float) for o in objects], axis=-1)
    norm = np.linalg.norm(stack.ravel())
    scaled = stack / norm if norm > 0 else stack
    fit = _fit_group_model(stack, cfg)
    return contrast_features(scaled, fit.model), fit


DISTANCE_METRICS = ("l1", "l2", "canberra", "cosine", "correlation", "exp-l2")


def pairwise_distance(features, metric):
    """Symmetric zero-diagonal distance matrix between feature rows.

    ``exp-l2`` is ``1 - exp(-d2^2 / sigma^2)`` with ``sigma`` the median
    nonzero pairwise Euclidean distance (a dimensionless bandwidth).
    """
    feats = np.asarray(features, dtype=float)
    if metric == "l1":
        return squareform(pdist(feats, "cityblock"))
    if metric == "l2":
        return squareform(pdist(feats, "euclidean"))
    if metric == "canberra":
        return squareform(pdist(feats, "canberra"))
    if metric == "cosine":
        return squareform(pdist(feats, "cosine"))
    if metric == "correlation":
        return squareform(pdist(feats, "correlation"))
    if metric == "exp-l2":
        d2 = pdist(feats, "euclidean")
        nonzero = d2[d2 > 0]
        sigma = float(np.median(nonzero)) if nonzero.size else 1.0
        return squareform(1.0 - np.exp(-(d2 ** 2) / sigma ** 2))
    raise ConfigError(f"unknown metric {metric!r}; expected one of {DISTANCE_METRICS}")


def agglomerative(dist, linkage="average"):
    """Bottom-up merge list from a full distance matrix.

    Returns ``n-1`` rows ``(id_a, id_b, height, size)`` in scipy's id
    convention (originals ``0..n-1``, merged clusters numbered onward).
    Candidate pairs at equal height merge smallest ids first.  Heights
    follow Lance-Williams updates for ``average`` or ``complete`` linkage.
    """
    if linkage not in ("average", "complete"):
        raise ConfigError(f"unknown linkage {linkage!r}")
    d0 = np.asarray(dist, dtype=float)
    n = d0.shape[0]
    if d0.shape != (n, n):
        raise ConfigError("dist must be square")
    total = 2 * n - 1
    d = np.full((total, total), np.inf)
    d[:n, :n] = d0
    np.fill_diagonal(d, np.inf)
    sizes = np.ones(total, dtype=int)
    active = list(range(n))
    merges = []
    for step in range(n - 1):
        best = None
        for ai in range(len(active)):
            for bi in range(ai + 1, len(active)):
                a, b = active[ai], active[bi]
                key = (d[a, b], a, b)
                if best is None or key < best:
                    best = key
        height, a, b = best
        new = n + step
        sizes[new] = sizes[a] + sizes[b]
        for o in active:
            if o in (a, b):
                continue
            if linkage == "average":
                d_new = (sizes[a] * d[a, o] + sizes[b] * d[b, o]) / (sizes[a] + sizes[b])
            else:
                d_new = max(d[a, o], d[b, o])
            d[new, o] = d[o, new] = d_new
        active.remove(a)
        active.remove(b)
        active.append(new)
        merges.append((a, b, float(height), int(sizes[new])))
    return merges


def cluster_labels(merges, n_items, n_clusters):
    """Cut a merge list at ``n_clusters`` clusters; labels are assigned in
    order of each cluster's smallest member so they are deterministic."""
    if not 1 <= n_clusters <= n_items:
        raise ConfigError("n_clusters out of range")
    parent = list(range(n_items + len(merges)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for step, (a, b, _, _) in enumerate(merges[: n_items - n_clusters]):
        new = n_items + step
        parent[find(a)] = new
        parent[find(b)] = new
    roots = {}
    labels = np.empty(n_items, dtype=int)
    for i in range(n_items):
        r = find(i)
        if r not in roots:
            roots[r] = len(roots)
        labels[i] = roots[r]
    return labels


# ---------------------------------------------------------------------------
# partition metrics


def _contingency(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ConfigError("labelings must be equal-length vectors")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def _comb2(x):
    return x * (x - 1) / 2.0


def adjusted_rand(a, b):
    """Adjusted Rand index (pair counting with chance correction)."""
    t = _contingency(a, b)
    n = t.sum()
    sum_ij = _comb2(t).sum()
    sum_a = _comb2(t.sum(axis=1)).sum()
    sum_b = _comb2(t.sum(axis=0)).sum()
    total = _comb2(n)
    if total == 0:
        return 1.0
    expected = sum_a * sum_b / total
    maximum = 0.5 * (sum_a + sum_b)
    if maximum == expected:
        return 1.0
    return float((sum_ij - expected) / (maximum - expected))


def fowlkes_mallows(a, b):
    """Fowlkes-Mallows score: geometric mean of pairwise precision and
    recall."""
    t = _contingency(a, b)
    tk = _comb2(t).sum()
    pk = _comb2(t.sum(axis=1)).sum()
    qk = _comb2(t.sum(axis=0)).sum()
    if tk == 0 or pk == 0 or qk == 0:
        return 0.0
    return float(tk / np.sqrt(pk * qk))


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def _mutual_info(table):
    n = table.sum()
    nz = table > 0
    nij = table[nz].astype(float)
    outer_counts = np.outer(table.sum(axis=1), table.sum(axis=0))[nz].astype(float)
    return float((nij / n * (np.log(nij * n) - np.log(outer_counts))).sum())


def _expected_mutual_info(table):
    """Expectation of MI over the fixed-margin hypergeometric null."""
    n = int(table.sum())
    rows = table.sum(axis=1).astype(int)
    cols = table.sum(axis=0).astype(int)
    emi = 0.0
    lg = gammaln
    for ai in rows:
        for bj in cols:
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            for nij in range(lo, hi + 1):
                term1 = nij / n * (np.log(n) + np.log(nij) - np.log(ai) - np.log(bj))
                log_prob = (
                    lg(ai + 1) + lg(bj + 1) + lg(n - ai + 1) + lg(n - bj + 1)
                    - lg(n + 1) - lg(nij + 1) - lg(ai - nij + 1) - lg(bj - nij + 1)
                    - lg(n - ai - bj + nij + 1)
                )
                emi += term1 * np.exp(log_prob)
    return float(emi)


def adjusted_mutual_info(a, b):
    """Adjusted mutual information with the max(H_a, H_b) normalizer."""
    t = _contingency(a, b)
    n = t.sum()
    if t.shape == (1, 1):
        return 1.0
    mi = _mutual_info(t)
    emi = _expected_mutual_info(t)
    h_a = _entropy(t.sum(axis=1), n)
    h_b = _entropy(t.sum(axis=0), n)
    normalizer = max(h_a, h_b)
    denom = normalizer - emi
    if abs(denom) < np.finfo(float).eps:
        denom = np.copysign(np.finfo(float).eps, denom if denom != 0 else 1.0)
    return float((mi - emi) / denom)


# ---------------------------------------------------------------------------
# evaluation utilities


def accuracy(y_true, y_pred):
    y_true = list(y_true)
    y_pred = list(y_pred)
    if len(y_true) != len(y_pred):
        raise ConfigError("length mismatch")
    if not y_true:
        raise ConfigError("empty evaluation")
    return sum(t == p for t, p in zip(y_true, y_pred)) / len(y_true)


def confusion_matrix(y_true, y_pred, labels=None):
    labels = sorted(set(y_true) | set(y_pred)) if labels is None else list(labels)
    index = {l: i for i, l in enumerate(labels)}
    out = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        out[index[t], index[p]] += 1
    return out, labels


def precision_recall_f1(y_true, y_pred):
    """Macro-averaged precision, recall, and F1 over the true label set."""
    cm, labels = confusion_matrix(y_true, y_pred)
    precs, recs, f1s = [], [], []
    for i, _ in enumerate(labels):
        tp = cm[i, i]
        fp = cm[:, i].sum() - tp
        fn = cm[i, :].sum() - tp
        prec = tp / (tp + fp) if tp + fp > 0 else 0.0
        rec = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
        precs.append(prec)
        recs.append(rec)
        f1s.append(f1)
    return float(np.mean(precs)), float(np.mean(recs)), float(np.mean(f1s))


def kfold_split(n_items, n_folds, seed=0):
    """Deterministic shuffled split into ``n_folds`` near-equal held-out
    index arrays covering ``range(n_items)`` exactly once."""
    if not 2 <= n_folds <= n_items:
        raise ConfigError("need 2 <= n_folds <= n_items")
    perm = np.random.default_rng(seed).permutation(n_items)
    return [np.sort(fold) for fold in np.array_split(perm, n_folds)]
