"""Dense tensor primitives built on a column-major linearization convention.

Every routine in this package identifies the entries of a ``d``-way array
``X`` of shape ``(n_1, ..., n_d)`` with a flat vector through the
column-major rule

    f(i_1, ..., i_d) = i_1 + n_1*(i_2 + n_2*(i_3 + ...)),    (0-based)

i.e. the first index varies fastest.  NumPy exposes exactly this ordering
through ``order='F'``, so tensors are plain ``numpy.ndarray`` objects and
vectorize/tensorize/unfold are thin, allocation-conscious wrappers.  Mode
permutations are realized as index permutations (``numpy.transpose``); no
commutation matrices are ever materialized.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "linear_index",
    "vectorize",
    "tensorize",
    "unfold",
    "fold",
    "mode_product",
    "mode_multiply",
    "multi_mode_multiply",
    "contract_except",
    "outer",
    "kronecker",
    "khatri_rao",
    "khatri_rao_chain",
    "frobenius_norm",
    "permute_modes",
    "cp_reconstruct",
    "mttkrp",
]


def linear_index(multi_index, dims):
    """Column-major linear position of a multi-index (0-based).

    Kept as an explicit sum so tests can check the layout convention
    against an independent formula rather than against NumPy itself.
    """
    multi_index = tuple(int(i) for i in multi_index)
    dims = tuple(int(n) for n in dims)
    if len(multi_index) != len(dims):
        raise ValueError("multi_index and dims must have equal length")
    pos = 0
    stride = 1
    for i, n in zip(multi_index, dims):
        if not 0 <= i < n:
            raise ValueError(f"index {i} out of range for dimension {n}")
        pos += i * stride
        stride *= n
    return pos


def vectorize(x):
    """Flatten a tensor into a vector following the column-major rule."""
    return np.ravel(x, order="F")


def tensorize(v, dims):
    """Inverse of :func:`vectorize`: reshape a flat vector to ``dims``."""
    v = np.asarray(v)
    if v.size != int(np.prod(dims)):
        raise ValueError(f"cannot tensorize length-{v.size} vector to shape {tuple(dims)}")
    return np.reshape(v, tuple(dims), order="F")


def unfold(x, mode):
    """Mode-``mode`` unfolding: rows indexed by ``i_mode``.

    Column ``j`` enumerates the remaining indices in their natural order
    by the same column-major rule, so ``unfold(x, 0)`` of a matrix is the
    matrix itself.
    """
    x = np.asarray(x)
    return np.reshape(np.moveaxis(x, mode, 0), (x.shape[mode], -1), order="F")


def fold(mat, mode, dims):
    """Inverse of :func:`unfold` for a tensor of shape ``dims``."""
    dims = tuple(dims)
    rest = dims[:mode] + dims[mode + 1:]
    return np.moveaxis(np.reshape(mat, (dims[mode],) + rest, order="F"), 0, mode)


def mode_product(x, y, mode_x, mode_y):
    """Contract mode ``mode_x`` of ``x`` with mode ``mode_y`` of ``y``.

    The result carries the remaining modes of ``x`` (in order) followed by
    the remaining modes of ``y``.  Contracting two vectors yields a 0-d
    array holding their inner product.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape[mode_x] != y.shape[mode_y]:
        raise ValueError(
            f"contracted modes disagree: {x.shape[mode_x]} vs {y.shape[mode_y]}"
        )
    return np.tensordot(x, y, axes=([mode_x], [mode_y]))


def mode_multiply(x, a, mode):
    """Multiply mode ``mode`` of tensor ``x`` by the matrix ``a`` in place
    of that mode (the Tucker-style convention: the new axis replaces the
    old one at the same position).  ``a`` has shape ``(m, n_mode)``.
    """
    x = np.asarray(x)
    a = np.asarray(a)
    return np.moveaxis(np.tensordot(a, x, axes=([1], [mode])), 0, mode)


def multi_mode_multiply(core, matrices, skip=None):
    """Apply ``matrices[k]`` along mode ``k`` of ``core`` for every k.

    ``skip`` omits one mode (useful for least-squares co-factors).  A
    ``None`` entry in ``matrices`` leaves that mode untouched.
    """
    out = np.asarray(core)
    for k, a in enumerate(matrices):
        if a is None or k == skip:
            continue
        out = mode_multiply(out, a, k)
    return out


def contract_except(x, y, keep):
    """Contract all modes of ``x`` and ``y`` except those listed in ``keep``.

    Both tensors must agree on the contracted dimensions.  The result
    carries the kept modes of ``x`` followed by the kept modes of ``y``;
    with ``keep=()`` this is the Frobenius inner product as a 0-d array.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if x.ndim != y.ndim:
        raise ValueError("operands must share order")
    keep = sorted(int(k) for k in keep)
    contracted = [k for k in range(x.ndim) if k not in keep]
    return np.tensordot(x, y, axes=(contracted, contracted))


def outer(x, y):
    """Outer (tensor) product; result order is ``x.ndim + y.ndim``."""
    return np.tensordot(np.asarray(x), np.asarray(y), axes=0)


def kronecker(a, b):
    """Kronecker product of two matrices."""
    return np.kron(a, b)


def khatri_rao(a, b):
    """Column-wise Kronecker product of two matrices with equal column count."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError("khatri_rao operands must share column count")
    return np.einsum("ir,jr->ijr", a, b).reshape(a.shape[0] * b.shape[0], a.shape[1])


def khatri_rao_chain(matrices, skip=None):
    """Khatri-Rao product of ``matrices`` in descending mode order, optionally
    skipping one mode.

    With the column-major unfolding used here, the factor-matrix identity
    reads ``unfold(X, k) = U_k @ khatri_rao_chain(U, skip=k).T``, which is
    why the chain runs from the last mode down to the first.
    """
    picked = [m for k, m in enumerate(matrices) if k != skip]
    if not picked:
        raise ValueError("khatri_rao_chain needs at least one matrix")
    out = picked[0]
    for m in picked[1:]:
        out = khatri_rao(m, out)
    return out


def frobenius_norm(x):
    """Frobenius norm of a tensor of any order."""
    return float(np.linalg.norm(np.asarray(x).ravel()))


def permute_modes(x, perm):
    """Reorder tensor modes; a pure index permutation, no data movement
    semantics beyond ``numpy.transpose``.
    """
    return np.transpose(np.asarray(x), axes=tuple(perm))


def cp_reconstruct(factors, dims=None):
    """Dense tensor of a CP-form term: sum of rank-1 outer products whose
    k-th vectors are the columns of ``factors[k]``.
    """
    dims = tuple(f.shape[0] for f in factors) if dims is None else tuple(dims)
    mat = factors[0] @ khatri_rao_chain(factors, skip=0).T
    return fold(mat, 0, dims)


def mttkrp(x, factors, mode):
    """Matricized tensor times Khatri-Rao product:
    ``unfold(x, mode) @ khatri_rao_chain(factors, skip=mode)``.

    The workhorse contraction of gradients and ALS updates; evaluated
    through an einsum so no Khatri-Rao matrix is formed for small orders.
    """
    x = np.asarray(x)
    d = x.ndim
    if d + 1 > 25:
        return unfold(x, mode) @ khatri_rao_chain(factors, skip=mode)
    letters = "abcdefghijklmnopqrstuvwxy"
    rank = "z"
    in_sub = letters[:d]
    operands = [x]
    subs = [in_sub]
    for k in range(d):
        if k == mode:
            continue
        operands.append(factors[k])
        subs.append(letters[k] + rank)
    expr = ",".join(subs) + "->" + letters[mode] + rank
    return np.einsum(expr, *operands, optimize=True)
