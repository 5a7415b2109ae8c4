"""Tensors, rank decompositions, and the recursive bilinear application engine.

A tensor here is a trilinear form over variables X[i,k], Y[j,k'], Z[i',j']
of a given shape; applying it to matrices A (rows indexed by i, columns by k)
and B (rows indexed by j, columns by k') produces the q_i x q_j matrix whose
(i',j') entry is the coefficient-weighted sum of A*B products landing in
Z[i',j'].  For the exact matrix-multiplication tensor this is A @ B.T.

Coefficient storage is a dense 6-axis array indexed (i, k, j, k', i', j').
Kronecker index flattening is row-major: (i, i2) -> i * q2 + i2, fixed once.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product as _iproduct

import numpy as np

__all__ = [
    "TensorShape",
    "Tensor",
    "Rank1Term",
    "Decomposition",
    "CapacityError",
    "ShapeError",
    "tensor_of_decomposition",
    "kronecker",
    "kron_decomposition",
    "reflect",
    "reflect_decomposition",
    "apply_direct",
    "apply_recursive",
    "apply_power",
    "blend_decomposition",
    "decomposition_to_text",
    "decomposition_from_text",
    "MultiplyCounter",
]

# Dense Kronecker powers are capped so a runaway power request fails fast
# instead of exhausting memory.  2^26 doubles = 0.5 GB.
DEFAULT_CAPACITY = 1 << 26


class CapacityError(Exception):
    """Requested tensor/decomposition product exceeds the memory budget."""


class ShapeError(ValueError):
    """Operand shapes are inconsistent with the tensor shape."""


@dataclass(frozen=True)
class TensorShape:
    q_i: int
    q_j: int
    q_k: int

    def __post_init__(self):
        if min(self.q_i, self.q_j, self.q_k) < 1:
            raise ShapeError(f"all shape entries must be >= 1, got {self}")

    @property
    def coeff_shape(self):
        return (self.q_i, self.q_k, self.q_j, self.q_k, self.q_i, self.q_j)

    def kron(self, other: "TensorShape") -> "TensorShape":
        return TensorShape(self.q_i * other.q_i, self.q_j * other.q_j,
                           self.q_k * other.q_k)

    def power(self, n: int) -> "TensorShape":
        return TensorShape(self.q_i ** n, self.q_j ** n, self.q_k ** n)


@dataclass(frozen=True)
class Tensor:
    """Dense trilinear form; coeff[i, k, j, k', i', j'] multiplies X[i,k] Y[j,k'] Z[i',j']."""

    shape: TensorShape
    coeff: np.ndarray

    def __post_init__(self):
        if self.coeff.shape != self.shape.coeff_shape:
            raise ShapeError(
                f"coefficient array {self.coeff.shape} does not match shape "
                f"{self.shape.coeff_shape}")
        if not np.all(np.isfinite(self.coeff)):
            raise ValueError("tensor coefficients must be finite")
        self.coeff.setflags(write=False)

    def __eq__(self, other):
        return (isinstance(other, Tensor) and self.shape == other.shape
                and np.array_equal(self.coeff, other.coeff))

    def allclose(self, other: "Tensor", rtol: float = 1e-12) -> bool:
        if self.shape != other.shape:
            return False
        scale = max(np.abs(self.coeff).max(), np.abs(other.coeff).max(), 1e-300)
        return bool(np.abs(self.coeff - other.coeff).max() <= rtol * scale)


@dataclass(frozen=True)
class Rank1Term:
    """One rank-1 summand: alpha over (i,k), beta over (j,k), gamma over (i,j)."""

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        for name, arr in (("alpha", self.alpha), ("beta", self.beta),
                          ("gamma", self.gamma)):
            if arr.ndim != 2:
                raise ShapeError(f"{name} must be a 2-d coefficient array")
            arr.setflags(write=False)

    def reflect(self) -> "Rank1Term":
        return Rank1Term(self.beta.copy(), self.alpha.copy(),
                         self.gamma.T.copy())


@dataclass(frozen=True)
class Decomposition:
    shape: TensorShape
    terms: tuple

    def __post_init__(self):
        qi, qj, qk = self.shape.q_i, self.shape.q_j, self.shape.q_k
        for t in self.terms:
            if t.alpha.shape != (qi, qk) or t.beta.shape != (qj, qk) \
                    or t.gamma.shape != (qi, qj):
                raise ShapeError(
                    f"term shapes {t.alpha.shape}/{t.beta.shape}/{t.gamma.shape}"
                    f" do not match {self.shape}")

    @property
    def rank(self) -> int:
        return len(self.terms)

    def is_integer(self) -> bool:
        return all(
            np.array_equal(m, np.round(m))
            for t in self.terms for m in (t.alpha, t.beta, t.gamma))


def make_term(alpha, beta, gamma) -> Rank1Term:
    return Rank1Term(np.array(alpha, dtype=float), np.array(beta, dtype=float),
                     np.array(gamma, dtype=float))


def make_decomposition(shape: TensorShape, terms) -> Decomposition:
    return Decomposition(shape, tuple(terms))


# ---------------------------------------------------------------------------
# construction and combination
# ---------------------------------------------------------------------------

def tensor_of_decomposition(d: Decomposition) -> Tensor:
    out = np.zeros(d.shape.coeff_shape)
    for t in d.terms:
        # fixed ((alpha*beta)*gamma) order so coefficient cancellations between
        # terms built from shared float atoms stay bit-exact
        out += np.multiply.outer(np.multiply.outer(t.alpha, t.beta), t.gamma)
    return Tensor(d.shape, out)


def _check_capacity(n_entries: int, capacity: int):
    if n_entries > capacity:
        raise CapacityError(
            f"result would hold {n_entries} coefficients, over budget {capacity}")


def kronecker(t1: Tensor, t2: Tensor, capacity: int = DEFAULT_CAPACITY) -> Tensor:
    shape = t1.shape.kron(t2.shape)
    _check_capacity(int(np.prod(shape.coeff_shape)), capacity)
    out = np.einsum("ikjlmn,IKJLMN->iIkKjJlLmMnN", t1.coeff, t2.coeff)
    return Tensor(shape, np.ascontiguousarray(out.reshape(shape.coeff_shape)))


def tensor_power(t: Tensor, n: int, capacity: int = DEFAULT_CAPACITY) -> Tensor:
    out = t
    for _ in range(n - 1):
        out = kronecker(out, t, capacity)
    return out


def kron_decomposition(d1: Decomposition, d2: Decomposition,
                       capacity: int = DEFAULT_CAPACITY) -> Decomposition:
    shape = d1.shape.kron(d2.shape)
    _check_capacity(d1.rank * d2.rank * max(shape.coeff_shape) ** 2, capacity)
    terms = []
    for a in d1.terms:
        for b in d2.terms:
            terms.append(Rank1Term(np.kron(a.alpha, b.alpha),
                                   np.kron(a.beta, b.beta),
                                   np.kron(a.gamma, b.gamma)))
    return Decomposition(shape, tuple(terms))


def reflect(t: Tensor) -> Tensor:
    """Swap the roles of the X and Y variables; output cells transpose with
    them so that eff_{i,j}(reflect(T)) = eff_{j,i}(T)."""
    if t.shape.q_i != t.shape.q_j:
        raise ShapeError("reflection needs q_i == q_j")
    return Tensor(t.shape, np.ascontiguousarray(t.coeff.transpose(2, 3, 0, 1, 5, 4)))


def reflect_decomposition(d: Decomposition) -> Decomposition:
    if d.shape.q_i != d.shape.q_j:
        raise ShapeError("reflection needs q_i == q_j")
    return Decomposition(d.shape, tuple(t.reflect() for t in d.terms))


def blend_decomposition(d1: Decomposition, a: int, d2: Decomposition, b: int,
                        capacity: int = DEFAULT_CAPACITY) -> Decomposition:
    """d1^(x)a kron d2^(x)b; rank multiplies accordingly."""
    if a < 0 or b < 0 or a + b == 0:
        raise ValueError("need nonnegative powers with a + b >= 1")
    parts = [d1] * a + [d2] * b
    out = parts[0]
    for p in parts[1:]:
        out = kron_decomposition(out, p, capacity)
    return out


# ---------------------------------------------------------------------------
# application
# ---------------------------------------------------------------------------

def apply_direct(t: Tensor, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """C[i',j'] = sum T(X[i,k] Y[j,k'] Z[i',j']) A[i,k] B[j,k']."""
    qi, qj, qk = t.shape.q_i, t.shape.q_j, t.shape.q_k
    A = np.asarray(A)
    B = np.asarray(B)
    if A.shape != (qi, qk) or B.shape != (qj, qk):
        raise ShapeError(f"operands {A.shape}/{B.shape} do not fit {t.shape}")
    return np.einsum("ikjlmn,ik,jl->mn", t.coeff, A, B)


class MultiplyCounter:
    """Counts base-level bilinear multiplications performed by the engine."""

    def __init__(self):
        self.count = 0

    def add(self, n: int):
        self.count += int(n)


def _term_matrices(d: Decomposition, dtype):
    Ma = np.array([t.alpha.ravel() for t in d.terms], dtype=dtype)
    Mb = np.array([t.beta.ravel() for t in d.terms], dtype=dtype)
    Mg = np.array([t.gamma.ravel() for t in d.terms], dtype=dtype)
    return Ma, Mb, Mg


def _sweep(vec: np.ndarray, mats) -> np.ndarray:
    """Contract level axis l of vec (over axes [d_1..d_N]) with mats[l] (r_l x d_l).

    State is kept as (done-ranks, current level, remaining levels); each step is
    a broadcast matmul, with a plain GEMM once the remainder collapses.
    """
    state = vec
    pre = 1
    for M in mats:
        r, dd = M.shape
        rest = state.size // (pre * dd)
        if rest == 1:
            state = (state.reshape(pre, dd) @ M.T).reshape(-1)
        else:
            st = state.reshape(pre, dd, rest)
            state = np.matmul(M[None, :, :], st).reshape(-1)
        pre *= r
    return state


def _interleave(M: np.ndarray, per_row, per_col, dtype) -> np.ndarray:
    """Reorder a (prod per_row) x (prod per_col) matrix into the vector over
    per-level paired axes ((r_1,c_1),...,(r_N,c_N)), row-major throughout."""
    N = len(per_row)
    t = np.asarray(M, dtype=dtype).reshape(list(per_row) + list(per_col))
    perm = []
    for l in range(N):
        perm += [l, N + l]
    return np.ascontiguousarray(t.transpose(perm)).reshape(-1)


def _uninterleave(vec: np.ndarray, per_row, per_col) -> np.ndarray:
    N = len(per_row)
    dims = []
    for l in range(N):
        dims += [per_row[l], per_col[l]]
    t = vec.reshape(dims)
    perm = [2 * l for l in range(N)] + [2 * l + 1 for l in range(N)]
    nr = int(np.prod(per_row))
    nc = int(np.prod(per_col))
    return np.ascontiguousarray(t.transpose(perm)).reshape(nr, nc)


def apply_power(levels, A, B, dtype=None, counter: MultiplyCounter | None = None,
                top_chunk: int | None = None) -> np.ndarray:
    """Apply the Kronecker product of per-level decompositions to A and B.

    levels: list of Decomposition, one per Kronecker factor (level l shapes
    multiply).  A is (prod q_i) x (prod q_k), B is (prod q_j) x (prod q_k).
    Equivalent to apply_direct on the expanded product tensor; performs exactly
    prod(rank_l) base-level bilinear multiplications.

    top_chunk: number of leading levels looped term-by-term in Python to bound
    peak memory (None picks one from the rank profile).
    """
    N = len(levels)
    qi = [d.shape.q_i for d in levels]
    qj = [d.shape.q_j for d in levels]
    qk = [d.shape.q_k for d in levels]
    A = np.asarray(A)
    B = np.asarray(B)
    if A.shape != (int(np.prod(qi)), int(np.prod(qk))):
        raise ShapeError(f"A is {A.shape}, expected {(np.prod(qi), np.prod(qk))}")
    if B.shape != (int(np.prod(qj)), int(np.prod(qk))):
        raise ShapeError(f"B is {B.shape}, expected {(np.prod(qj), np.prod(qk))}")
    if dtype is None:
        integer = (all(d.is_integer() for d in levels)
                   and np.issubdtype(A.dtype, np.integer)
                   and np.issubdtype(B.dtype, np.integer))
        dtype = np.int64 if integer else np.float64

    mats = [_term_matrices(d, dtype) for d in levels]
    ranks = [d.rank for d in levels]
    total_rank = int(np.prod(ranks, dtype=np.int64))
    if counter is not None:
        counter.add(total_rank)
    if any(r == 0 for r in ranks):
        return np.zeros((int(np.prod(qi)), int(np.prod(qj))), dtype=dtype)

    if top_chunk is None:
        top_chunk = 0
        width = total_rank
        while width > (1 << 22):   # keep sweep states around <= 4M entries/level
            width //= ranks[top_chunk]
            top_chunk += 1
    top_chunk = min(top_chunk, N - 1) if N > 1 else 0

    va = _interleave(A, qi, qk, dtype)
    vb = _interleave(B, qj, qk, dtype)
    Mas = [m[0] for m in mats]
    Mbs = [m[1] for m in mats]
    MgT = [np.ascontiguousarray(m[2].T) for m in mats]

    if top_chunk == 0:
        wa = _sweep(va, Mas)
        wb = _sweep(vb, Mbs)
        c = _sweep(wa * wb, MgT)
    else:
        t = top_chunk
        da = int(np.prod([qi[l] * qk[l] for l in range(t)]))
        db = int(np.prod([qj[l] * qk[l] for l in range(t)]))
        va2 = va.reshape(da, -1)
        vb2 = vb.reshape(db, -1)
        c = None
        for branch in _iproduct(*[range(r) for r in ranks[:t]]):
            rowa = Mas[0][branch[0]]
            rowb = Mbs[0][branch[0]]
            rowg = mats[0][2][branch[0]]
            for l in range(1, t):
                rowa = np.kron(rowa, Mas[l][branch[l]])
                rowb = np.kron(rowb, Mbs[l][branch[l]])
                rowg = np.kron(rowg, mats[l][2][branch[l]])
            wa = _sweep(rowa @ va2, Mas[t:])
            wb = _sweep(rowb @ vb2, Mbs[t:])
            cb = _sweep(wa * wb, MgT[t:])
            contrib = np.outer(rowg, cb)
            c = contrib if c is None else c + contrib
        c = c.reshape(-1)
    return _uninterleave(c, qi, qj)


def apply_recursive(d: Decomposition, N: int, A, B, cutoff: int = 1,
                    counter: MultiplyCounter | None = None) -> np.ndarray:
    """Strassen-style recursion for d^(x)N applied to A, B.

    Performs exactly rank(d)^N base-level bilinear multiplications (reported
    through `counter`).  Integer decompositions on integer inputs stay exact.
    At `cutoff` remaining levels the expanded power decomposition is applied in
    one vectorized step; this changes constants only, not results.
    """
    if N < 1:
        raise ValueError("N must be a positive integer")
    qi, qj, qk = d.shape.q_i, d.shape.q_j, d.shape.q_k
    A = np.asarray(A)
    B = np.asarray(B)
    if A.shape != (qi ** N, qk ** N) or B.shape != (qj ** N, qk ** N):
        raise ShapeError(
            f"operands {A.shape}/{B.shape} are not {N}-th power shapes of {d.shape}")
    integer = (d.is_integer() and np.issubdtype(A.dtype, np.integer)
               and np.issubdtype(B.dtype, np.integer))
    dtype = np.int64 if integer else np.float64
    A = A.astype(dtype, copy=False)
    B = B.astype(dtype, copy=False)
    cutoff = max(1, min(cutoff, N))
    Ma, Mb, Mg = _term_matrices(d, dtype)
    # expanded matrices for the vectorized base case
    Ka, Kb, Kg = Ma, Mb, Mg
    for _ in range(cutoff - 1):
        Ka = np.kron(Ka, Ma)
        Kb = np.kron(Kb, Mb)
        Kg = np.kron(Kg, Mg)

    def rec(a, b, n):
        if n <= cutoff:
            va = _interleave(a, [qi] * n, [qk] * n, dtype)
            vb = _interleave(b, [qj] * n, [qk] * n, dtype)
            if n == cutoff:
                ka, kb, kg = Ka, Kb, Kg
            else:
                ka, kb, kg = Ma, Mb, Mg
                for _ in range(n - 1):
                    ka = np.kron(ka, Ma)
                    kb = np.kron(kb, Mb)
                    kg = np.kron(kg, Mg)
            p = (ka @ va) * (kb @ vb)
            if counter is not None:
                counter.add(p.size)
            return _uninterleave(kg.T @ p, [qi] * n, [qj] * n)
        # split off the leading level
        ra = a.reshape(qi, qi ** (n - 1), qk, qk ** (n - 1))
        rb = b.reshape(qj, qj ** (n - 1), qk, qk ** (n - 1))
        c = np.zeros((qi, qi ** (n - 1), qj, qj ** (n - 1)), dtype=dtype)
        for t in d.terms:
            sub_a = np.einsum("ik,iakb->ab", t.alpha.astype(dtype), ra)
            sub_b = np.einsum("jk,jakb->ab", t.beta.astype(dtype), rb)
            sub_c = rec(sub_a, sub_b, n - 1)
            c += t.gamma.astype(dtype)[:, None, :, None] * sub_c[None, :, None, :]
        return c.reshape(qi ** n, qj ** n)

    return rec(A, B, N)


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------

def decomposition_to_text(d: Decomposition) -> str:
    """One term per line: three ';'-separated coefficient lists in
    (i,k) / (j,k) / (i,j) row-major order, after a `shape q_i q_j q_k` header."""
    lines = [f"shape {d.shape.q_i} {d.shape.q_j} {d.shape.q_k}"]
    for t in d.terms:
        parts = [" ".join(repr(float(x)) for x in m.ravel())
                 for m in (t.alpha, t.beta, t.gamma)]
        lines.append("; ".join(parts))
    return "\n".join(lines) + "\n"


def decomposition_from_text(text: str) -> Decomposition:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("shape"):
        raise ValueError("missing `shape q_i q_j q_k` header")
    _, qi, qj, qk = lines[0].split()
    shape = TensorShape(int(qi), int(qj), int(qk))
    terms = []
    for ln in lines[1:]:
        parts = ln.split(";")
        if len(parts) != 3:
            raise ValueError(f"term line needs 3 coefficient lists: {ln!r}")
        a, b, g = (np.array([float(x) for x in p.split()]) for p in parts)
        terms.append(Rank1Term(a.reshape(shape.q_i, shape.q_k),
                               b.reshape(shape.q_j, shape.q_k),
                               g.reshape(shape.q_i, shape.q_j)))
    return Decomposition(shape, tuple(terms))
