"""Frobenius inner products between structured 4-index operators.

Every supported operator is rearranged, lag block by lag block, into
``B[i, j, i + p, j + q]`` for fixed ``(p, q)``.  On such a block a separable
term is the rank-one outer product of two matrix diagonals, a stationary
term is a constant, and a banded term is a dense slice that exists only for
``|p|, |q| < d``.  Summing the block-wise inner products over all lag pairs
collapses to the closed forms below, so no ``K^4`` object is ever formed:
separable/stationary pairs cost ``O(K^2)``, pairs involving band storage
``O(K^2 d^2)`` and pairs involving raw samples ``O(N K^3)`` (or
``O(N^2 K^2)`` for two sample sets).
"""

from __future__ import annotations

from numbers import Real

import numpy as np

from .core import CovTensor4, separable_tensor
from .model import BandedTensor, EmpiricalCov, SepPlusBandedCov, apply_separable, shift_diagonals
from .stationary import StationarySymbol, apply_stationary, diagonal_sums, lag_counts, stationary_tensor

__all__ = [
    "expand_terms",
    "term_shape",
    "structured_inner",
    "structured_fro_norm2",
    "structured_distance",
    "contract_second",
    "contract_first",
]


def _is_pair(obj):
    return isinstance(obj, tuple) and len(obj) == 2 and all(np.ndim(a) == 2 for a in obj)


def expand_terms(terms):
    """Flatten ``terms`` into a list of ``(coef, atom)``.

    ``terms`` may be a single operator or a list whose items are operators or
    ``(coef, operator)`` tuples.  Atoms are ``(a1, a2)`` pairs,
    :class:`StationarySymbol`, :class:`BandedTensor`, :class:`EmpiricalCov`
    and :class:`CovTensor4`; :class:`SepPlusBandedCov` is split into its parts.
    """
    if not isinstance(terms, list):
        terms = [terms]
    out = []
    for item in terms:
        if isinstance(item, tuple) and len(item) == 2 and isinstance(item[0], Real) and not _is_pair(item):
            coef, obj = float(item[0]), item[1]
        else:
            coef, obj = 1.0, item
        if isinstance(obj, SepPlusBandedCov):
            out.append((coef, (obj.a1, obj.a2)))
            if obj.banded is not None:
                out.append((coef, obj.banded))
        elif _is_pair(obj):
            out.append((coef, (np.asarray(obj[0], float), np.asarray(obj[1], float))))
        elif isinstance(obj, (StationarySymbol, BandedTensor, EmpiricalCov, CovTensor4)):
            out.append((coef, obj))
        else:
            raise TypeError(f"unsupported operator term: {type(obj).__name__}")
    return out


def term_shape(atom):
    """Grid shape ``(k1, k2)`` of a single structured operator."""
    if _is_pair(atom):
        return (atom[0].shape[0], atom[1].shape[0])
    if isinstance(atom, CovTensor4):
        return (atom.k1, atom.k2)
    return tuple(atom.shape)


def _kind(atom):
    if _is_pair(atom):
        return "sep"
    return {
        StationarySymbol: "stat",
        BandedTensor: "band",
        EmpiricalCov: "emp",
        CovTensor4: "dense",
    }[type(atom)]


def _apply(atom, x):
    kind = _kind(atom)
    if kind == "sep":
        return apply_separable(atom[0], atom[1], x)
    if kind == "stat":
        return apply_stationary(atom, x)
    return atom.apply(x)


def _dense(atom):
    kind = _kind(atom)
    if kind == "sep":
        return separable_tensor(*atom)
    if kind == "stat":
        return stationary_tensor(atom)
    if kind == "dense":
        return atom
    return atom.to_tensor()


_ORDER = {"sep": 0, "stat": 1, "band": 2, "emp": 3, "dense": 4}


def structured_inner(x, y) -> float:
    """Frobenius inner product ``<x, y>`` of two structured operators (atoms)."""
    if term_shape(x) != term_shape(y):
        raise ValueError(f"grid mismatch: {term_shape(x)} vs {term_shape(y)}")
    kx, ky = _kind(x), _kind(y)
    if _ORDER[kx] > _ORDER[ky]:
        x, y, kx, ky = y, x, ky, kx

    if kx == "dense" or ky == "dense":
        return float(np.sum(_dense(x).data * _dense(y).data))
    if ky == "emp":
        data = y.samples.data
        if kx == "emp":
            gram = x.samples.data.reshape(x.samples.n, -1) @ data.reshape(len(data), -1).T
            return float(np.sum(gram**2) / (x.samples.n * len(data)))
        return float(np.sum(data * _apply(x, data)) / len(data))
    if kx == "sep" and ky == "sep":
        return float(np.sum(x[0] * y[0]) * np.sum(x[1] * y[1]))
    if kx == "sep" and ky == "stat":
        # block (p, q): diag_p(a1) diag_q(a2)^T against the constant s(-p, -q)
        t1 = diagonal_sums(x[0])
        t2 = diagonal_sums(x[1])
        return float(t1[::-1] @ y.s @ t2[::-1])
    if kx == "sep" and ky == "band":
        d = y.d
        return float(np.einsum("ijpq,ip,jq->", y.b, shift_diagonals(x[0], d), shift_diagonals(x[1], d)))
    if kx == "stat" and ky == "stat":
        return float(np.sum(lag_counts(*x.shape) * x.s * y.s))
    if kx == "stat" and ky == "band":
        d = y.d
        k1, k2 = x.shape
        block = x.s[k1 - d : k1 + d - 1, k2 - d : k2 + d - 1][::-1, ::-1]  # s(-p, -q)
        return float(np.sum(y.b.sum(axis=(0, 1)) * block))
    if kx == "band" and ky == "band":
        d = min(x.d, y.d)
        bx = x.b[:, :, x.d - d : x.d + d - 1, x.d - d : x.d + d - 1]
        by = y.b[:, :, y.d - d : y.d + d - 1, y.d - d : y.d + d - 1]
        return float(np.sum(bx * by))
    raise TypeError(f"no inner product for {kx} and {ky}")  # pragma: no cover


def structured_fro_norm2(terms) -> float:
    """Squared Frobenius norm of a signed sum of structured operators."""
    atoms = expand_terms(terms)
    if not atoms:
        return 0.0
    shape = term_shape(atoms[0][1])
    if any(term_shape(a) != shape for _, a in atoms):
        raise ValueError("all terms must share the same grid")
    total = 0.0
    for r, (cr, xr) in enumerate(atoms):
        total += cr * cr * structured_inner(xr, xr)
        for cs, xs in atoms[r + 1 :]:
            total += 2.0 * cr * cs * structured_inner(xr, xs)
    # cancellation may leave a tiny negative value
    return max(total, 0.0)


def structured_distance(x, y) -> float:
    """``||x - y||_F`` for structured operators (or lists of terms)."""
    tx = expand_terms(x)
    ty = [(-c, a) for c, a in expand_terms(y)]
    return float(np.sqrt(structured_fro_norm2(tx + ty)))


# --------------------------------------------------------------------------
# partial contractions used by nearest-Kronecker-product iterations


def _toeplitz_from_lags(v):
    """``M[i, k] = v(i - k)`` from a centred signed-lag vector."""
    k = (len(v) + 1) // 2
    i = np.arange(k)
    return v[(i[:, None] - i[None, :]) + k - 1]


def contract_second(terms, a2) -> np.ndarray:
    """``M[i, k] = sum_{j, l} C[i, j, k, l] a2[j, l]`` for a structured ``C``."""
    a2 = np.asarray(a2, dtype=np.float64)
    out = None
    for coef, atom in expand_terms(terms):
        kind = _kind(atom)
        if kind == "sep":
            m = atom[0] * np.sum(atom[1] * a2)
        elif kind == "stat":
            # sum_q s(h, -q) t2(q), h = i - k
            m = _toeplitz_from_lags(atom.s @ diagonal_sums(a2)[::-1])
        elif kind == "band":
            d = atom.d
            k1 = atom.k1
            w = np.einsum("ijpq,jq->ip", atom.b, shift_diagonals(a2, d))
            m = np.zeros((k1, k1))
            for p in range(-(d - 1), d):
                idx = np.arange(max(0, -p), min(k1, k1 - p))
                m[idx, idx + p] = w[idx, p + d - 1]
        elif kind == "emp":
            x = atom.samples.data
            n, k1, k2 = x.shape
            xa = (x @ a2).transpose(1, 0, 2).reshape(k1, n * k2)
            m = xa @ x.transpose(1, 0, 2).reshape(k1, n * k2).T / n
        else:
            m = np.einsum("ijkl,jl->ik", atom.data, a2)
        out = coef * m if out is None else out + coef * m
    return out


def contract_first(terms, a1) -> np.ndarray:
    """``M[j, l] = sum_{i, k} C[i, j, k, l] a1[i, k]`` for a structured ``C``."""
    a1 = np.asarray(a1, dtype=np.float64)
    out = None
    for coef, atom in expand_terms(terms):
        kind = _kind(atom)
        if kind == "sep":
            m = atom[1] * np.sum(atom[0] * a1)
        elif kind == "stat":
            # sum_p s(-p, m) t1(p), m = j - l
            m = _toeplitz_from_lags(diagonal_sums(a1)[::-1] @ atom.s)
        elif kind == "band":
            d = atom.d
            k2 = atom.k2
            w = np.einsum("ijpq,ip->jq", atom.b, shift_diagonals(a1, d))
            m = np.zeros((k2, k2))
            for q in range(-(d - 1), d):
                idx = np.arange(max(0, -q), min(k2, k2 - q))
                m[idx, idx + q] = w[idx, q + d - 1]
        elif kind == "emp":
            x = atom.samples.data
            n, k1, k2 = x.shape
            ax = (a1 @ x).reshape(n * k1, k2)
            m = x.reshape(n * k1, k2).T @ ax / n
        else:
            m = np.einsum("ijkl,ik->jl", atom.data, a1)
        out = coef * m if out is None else out + coef * m
    return out
