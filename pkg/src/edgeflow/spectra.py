"""Window eigensolver, clean edge branches, Fermi velocity and the flow-rate bound."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .hamiltonian import HermitianMatrix, build_edge_1d
from .model import EnergyWindow, PhysicalParams

DENSE_LIMIT = 400
# dense LDL inertia for matrices without the lattice block structure
DENSE_INERTIA_LIMIT = 4000


class EigenSolverError(RuntimeError):
    pass


class NoBranchInWindow(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EigenPairs:
    values: np.ndarray
    vectors: np.ndarray = field(repr=False)
    window: EnergyWindow

    def __len__(self):
        return self.values.size


def _as_operator(H):
    if isinstance(H, HermitianMatrix):
        return H.matrix
    return H


def _negatives(S: np.ndarray) -> tuple[int, int]:
    ev = np.linalg.eigvalsh(0.5 * (S + S.conj().T))
    scale = max(1.0, float(np.abs(ev).max()))
    return int(np.sum(ev < 0)), int(np.sum(np.abs(ev) <= 1e-13 * scale))


def _bk_inertia_inverse(S: np.ndarray) -> tuple[int, int, np.ndarray]:
    """Bunch-Kaufman LDL^dagger of a Hermitian block: (negatives, zeros, inverse)."""
    S = np.asarray(S, dtype=complex)
    hesv, = sla.lapack.get_lapack_funcs(("hesv",), (S,))
    lu, ipiv, inv, info = hesv(S, np.eye(S.shape[0], dtype=complex), lower=1)
    if info < 0:
        raise EigenSolverError(f"hesv failed with info={info}")
    n = S.shape[0]
    scale = max(1.0, float(np.abs(S).max()))
    d = lu.diagonal().real
    two = np.zeros(n, dtype=bool)
    skip = -1
    for k in np.flatnonzero(ipiv < 0):
        if k > skip and k + 1 < n:
            two[k] = two[k + 1] = True
            skip = k + 1
    single = ~two
    neg = int(np.sum(d[single] < 0))
    zero = int(np.sum(np.abs(d[single]) <= 1e-13 * scale))
    for k in np.flatnonzero(two)[::2]:
        a, c = d[k], d[k + 1]
        det = a * c - abs(lu[k + 1, k]) ** 2
        if abs(det) <= 1e-26 * scale**2:
            zero += 1
            neg += int(a + c < 0)
        elif det < 0:
            neg += 1
        else:
            neg += 2 * int(a + c < 0)
    if zero or info > 0:
        return neg, max(zero, int(info > 0)), None
    return neg, zero, inv


def _ring_inertia(A: sp.csr_matrix, slices: list[np.ndarray], sigma: float) -> tuple[int, int]:
    """Inertia of A - sigma for a periodic block-tridiagonal (ring) matrix.

    Slices 1 .. ny-1 are eliminated in order and slice 0 is kept as a border
    block collecting the wrap-around coupling; by Haynsworth additivity the
    inertia is the sum over the Schur complements.
    """
    ny = len(slices)
    nb = slices[0].size
    if all(idx.size == nb and idx[0] == j * nb and np.all(np.diff(idx) == 1)
           for j, idx in enumerate(slices)):
        bsr = A.tobsr(blocksize=(nb, nb))
        table = {}
        for r in range(ny):
            for p in range(bsr.indptr[r], bsr.indptr[r + 1]):
                table[r, bsr.indices[p]] = bsr.data[p]
        zero_blk = np.zeros((nb, nb), dtype=bsr.dtype)

        def blk(a, b):
            return table.get((a, b), zero_blk)
    else:
        A = A.tocsr()

        def blk(a, b):
            return A[slices[a]][:, slices[b]].toarray()

    eye = np.eye(slices[0].size)
    diagonal_bonds = all(
        np.count_nonzero(blk(j, j + 1) - np.diag(blk(j, j + 1).diagonal())) == 0
        for j in range(1, ny - 1)
    )
    border = blk(0, 0) - sigma * eye
    neg = zero = 0
    S_inv = None
    B_prev = None  # coupling (j-1, j)
    E = None       # coupling (j, 0) after elimination
    for j in range(1, ny):
        S = blk(j, j) - sigma * eye
        Ej = blk(j, 0)
        if j > 1:
            if diagonal_bonds:
                X = B_prev.diagonal().conj()[:, None] * S_inv
            else:
                X = B_prev.conj().T @ S_inv
            S = S - X @ B_prev
            Ej = Ej - X @ E
        n_, z_, S_inv = _bk_inertia_inverse(S)
        neg += n_
        zero += z_
        if S_inv is None:
            return neg, zero
        border = border - Ej.conj().T @ S_inv @ Ej
        E = Ej
        if j + 1 < ny:
            B_prev = blk(j, j + 1)
    n_, z_, _ = _bk_inertia_inverse(border)
    return neg + n_, zero + z_


def _check_ring(A: sp.csr_matrix, slices, ny: int) -> None:
    label = np.empty(A.shape[0], dtype=int)
    for b, idx in enumerate(slices):
        label[idx] = b
    coo = A.tocoo()
    d = np.abs(label[coo.row] - label[coo.col])
    if np.any((d > 1) & (d < ny - 1)):
        raise EigenSolverError("matrix couples non-adjacent y columns")


def count_below(H, sigma: float) -> int:
    """Number of eigenvalues strictly below sigma (Sylvester inertia).

    Lattice Hamiltonians use a block factorization over y columns;
    other matrices use a dense Bunch-Kaufman LDL^dagger.
    """
    if isinstance(H, HermitianMatrix):
        _check_ring(H.matrix, H.slices(), H.ny)
        neg, zero = _ring_inertia(H.matrix, H.slices(), sigma)
    else:
        M = H.toarray() if sp.issparse(H) else np.asarray(H)
        if M.shape[0] > DENSE_INERTIA_LIMIT:
            raise EigenSolverError("dense inertia count refused above DENSE_INERTIA_LIMIT")
        _, d, _ = sla.ldl(M - sigma * np.eye(M.shape[0]), hermitian=True)
        neg, zero = _negatives(d)
    if zero:
        raise EigenSolverError(f"sigma={sigma!r} coincides with an eigenvalue")
    return neg


def _residuals(A, values, vectors) -> np.ndarray:
    if vectors.size == 0:
        return np.zeros(0)
    R = A @ vectors - vectors * values[None, :]
    return np.linalg.norm(R, axis=0)


def _norm_estimate(A) -> float:
    if sp.issparse(A):
        return float(abs(A).sum(axis=1).max())
    return float(np.abs(A).sum(axis=1).max())


def eigen_window(H, window: EnergyWindow, check_count: bool = True) -> EigenPairs:
    """All eigenpairs of a Hermitian matrix inside ]lo, hi[.

    Up to ``DENSE_LIMIT`` (or when the window holds a large share of the
    spectrum) the matrix is diagonalized densely; otherwise a shift-invert
    Lanczos run targets the window centre with exactly as many vectors as
    the inertia count admits.  Either way the number found is
    checked against the inertia count, so no eigenvalue is dropped silently.
    """
    A = _as_operator(H)
    n = A.shape[0]
    expected = None
    if check_count or n > DENSE_LIMIT:
        expected = count_below(H, window.hi) - count_below(H, window.lo)

    if n <= DENSE_LIMIT or 4 * expected > n:
        M = A.toarray() if sp.issparse(A) else np.asarray(A)
        vals, vecs = sla.eigh(M, subset_by_value=(window.lo, window.hi))
    else:
        if expected == 0:
            vals, vecs = np.zeros(0), np.zeros((n, 0), dtype=A.dtype)
        else:
            shifted = (A - window.center * sp.identity(n, format="csc")).tocsc()
            lu = spla.splu(shifted, permc_spec="MMD_AT_PLUS_A")
            op = spla.LinearOperator(A.shape, matvec=lu.solve, dtype=np.result_type(A.dtype, float))
            v0 = np.ones(n, dtype=op.dtype)
            try:
                vals, vecs = spla.eigsh(A, k=expected, sigma=window.center, OPinv=op, v0=v0,
                                        ncv=min(n, max(2 * expected + 1, expected + 20)), tol=0)
            except spla.ArpackNoConvergence as exc:
                raise EigenSolverError(f"Lanczos did not converge: {exc}") from exc
        order = np.argsort(vals, kind="stable")
        vals, vecs = vals[order], vecs[:, order]
        keep = window.contains(vals)
        vals, vecs = vals[keep], vecs[:, keep]

    if expected is not None and vals.size != expected:
        raise EigenSolverError(
            f"found {vals.size} eigenvalues in ]{window.lo}, {window.hi}[ "
            f"but the inertia count is {expected}"
        )
    res = _residuals(A, vals, vecs)
    if res.size and res.max() > 1e-9 * _norm_estimate(A):
        raise EigenSolverError(f"residual {res.max():.3g} exceeds tolerance")
    return EigenPairs(vals, vecs, window)


@dataclass(frozen=True, eq=False)
class BranchTable:
    """Clean edge branches eps_n(k) on a k grid, with eps_0'(k)."""

    k: np.ndarray
    eps: np.ndarray  # shape (n_max + 1, nk)
    deps0: np.ndarray
    B: float

    @property
    def n_max(self) -> int:
        return self.eps.shape[0] - 1

    def eps0(self, k):
        return np.interp(k, self.k, self.eps[0])

    def slope0(self, k):
        return np.interp(k, self.k, self.deps0)

    def monotonicity_violations(self, tol: float = 0.0) -> int:
        return int(np.sum(np.diff(self.eps, axis=1) < -tol))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["k"] + [f"eps_{n}" for n in range(self.n_max + 1)] + ["deps_0"])
            for i, k in enumerate(self.k):
                wr.writerow([f"{k:.17g}"] + [f"{e:.17g}" for e in self.eps[:, i]]
                            + [f"{self.deps0[i]:.17g}"])


def edge_branches(params: PhysicalParams, x: np.ndarray, k_grid, n_max: int = 3,
                  hy: float | None = None) -> BranchTable:
    k_grid = np.asarray(k_grid, dtype=float)
    if k_grid.size < 3 or np.any(np.diff(k_grid) <= 0):
        raise ValueError("k grid must be increasing with at least three points")
    eps = np.empty((n_max + 1, k_grid.size))
    for i, k in enumerate(k_grid):
        eps[:, i] = build_edge_1d(params, x, k, hy).eigvalsh(n_max + 1)
    deps0 = np.gradient(eps[0], k_grid, edge_order=2)
    return BranchTable(k_grid, eps, deps0, params.B)


def fermi_velocity(table: BranchTable, delta: EnergyWindow, L: float,
                   phi: float = 0.0) -> tuple[int, int, float]:
    """Return (M, mbar, v_F).

    M puts eps_0(2 pi M/L + phi/L) nearest the centre of Delta.  mbar is the
    smallest band half-width for which both ends of the band are at least
    B/2 - 2 delta away from every energy in Delta; v_F is the minimum slope
    of eps_0 over the band.
    """
    B, d = delta.center, 0.5 * delta.width
    k = table.k
    m_lo = math.ceil((L * k[0] - phi) / (2 * math.pi))
    m_hi = math.floor((L * k[-1] - phi) / (2 * math.pi))
    m = np.arange(m_lo, m_hi + 1)
    km = (2 * math.pi * m + phi) / L
    e = table.eps0(km)
    inside = delta.contains(e)
    if not inside.any():
        raise NoBranchInWindow(
            f"eps_0 never enters ]{delta.lo}, {delta.hi}[ on the k grid "
            f"(range {e.min():.6g} .. {e.max():.6g})"
        )
    iM = int(np.argmin(np.where(inside, np.abs(e - B), np.inf)))
    need = B / 2 - 2 * d
    for mbar in range(0, m.size):
        lo, hi = iM - mbar, iM + mbar
        if lo < 0 or hi >= m.size:
            raise NoBranchInWindow(
                "k grid too short to isolate Delta: extend it so eps_0 spans "
                f"[{B / 2 + d:.6g}, {3 * B / 2 - d:.6g}]"
            )
        # worst case over E in Delta of |eps_0(M +- mbar) - E|
        a = min(e[hi] - delta.hi, delta.lo - e[lo])
        if a >= need:
            break
    vF = float(np.min(table.slope0(km[lo:hi + 1])))
    return int(m[iM]), int(mbar), vF


def alpha_bound(vF: float, B: float, w: float, delta: float) -> float | None:
    """Lower bound on L dE/dphi; ``None`` marks a vacuous bound."""
    if not vF > 0:
        raise ValueError(f"v_F must be positive, got {vF}")
    bracket = 1.0 - 2.0 * (1.0 + math.sqrt(3.0 * B) / vF) * w**2 / (B / 2 - 2 * delta) ** 2
    if bracket <= 0:
        return None
    return vF * bracket
