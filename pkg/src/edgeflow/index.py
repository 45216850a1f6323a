"""Relative index of projection pairs and the decoupling comparison.

In finite dimension every pair of projections has a trace-class
difference, so Ind(P; Q) = Tr(P - Q) is plain rank arithmetic.  Large
projections are kept in factored form P = V V^dagger with V having
orthonormal columns; the dense matrix is only formed on request.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .flow import BranchSet, crossing_count
from .hamiltonian import HermitianMatrix, build_edge_1d, build_hamiltonian, truncate_disorder
from .model import DisorderField, EnergyWindow, GridSpec, PhysicalParams, gap_window
from .spectra import DENSE_LIMIT, count_below, eigen_window

SOLVER_TOL = 1e-9


class ProjectionError(ValueError):
    pass


class NonIntegerIndex(ValueError):
    """Tr(P - Q) is not an integer within tolerance."""


@dataclass(eq=False)
class Projection:
    """Orthogonal projection, dense (``matrix``) or factored (``basis``)."""

    matrix: np.ndarray | None = field(default=None, repr=False)
    basis: np.ndarray | None = field(default=None, repr=False)
    source: str = ""

    def __post_init__(self):
        if (self.matrix is None) == (self.basis is None):
            raise ProjectionError("give exactly one of matrix or basis")

    @classmethod
    def from_basis(cls, V, source: str = "") -> "Projection":
        V = np.asarray(V)
        if V.ndim == 1:
            V = V[:, None]
        return cls(basis=V, source=source)

    @property
    def n(self) -> int:
        return (self.matrix if self.matrix is not None else self.basis).shape[0]

    @property
    def dense(self) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix
        return self.basis @ self.basis.conj().T

    def trace(self) -> float:
        if self.matrix is not None:
            return float(np.real(np.trace(self.matrix)))
        return float(np.sum(np.abs(self.basis) ** 2))

    def rank(self) -> int:
        return int(round(self.trace()))

    def apply(self, X):
        if self.matrix is not None:
            return self.matrix @ X
        return self.basis @ (self.basis.conj().T @ X)

    def conjugated(self, U) -> "Projection":
        if self.matrix is not None:
            return Projection(matrix=U @ self.matrix @ U.conj().T, source=self.source)
        return Projection(basis=U @ self.basis, source=self.source)

    def defects(self) -> dict:
        """Idempotency, Hermiticity and binary-spectrum defects."""
        if self.matrix is None:
            V = self.basis
            g = V.conj().T @ V - np.eye(V.shape[1])
            d = float(np.abs(g).max()) if g.size else 0.0
            return {"idempotency": d, "hermiticity": 0.0, "spectrum": d}
        P = self.matrix
        ev = np.linalg.eigvalsh(0.5 * (P + P.conj().T))
        return {
            "idempotency": float(np.linalg.norm(P @ P - P, 2)) if P.size else 0.0,
            "hermiticity": float(np.abs(P - P.conj().T).max()) if P.size else 0.0,
            "spectrum": float(np.min(np.stack([np.abs(ev), np.abs(ev - 1)]), axis=0).max())
            if ev.size else 0.0,
        }

    def is_valid(self) -> bool:
        d = self.defects()
        return d["idempotency"] <= 1e-10 and d["hermiticity"] <= 1e-12 and d["spectrum"] <= 1e-8


def _dense(H):
    if isinstance(H, HermitianMatrix):
        return H.toarray()
    if hasattr(H, "toarray"):
        return H.toarray()
    return np.asarray(H)


def spectral_projection(H, E_F: float, dense: bool | None = None) -> Projection:
    """Projection onto eigenvectors of H with eigenvalue <= E_F.

    Dense matrices (and sparse ones up to the dense limit) are diagonalized
    outright; larger sparse ones use the window eigensolver on
    ]lower bound, E_F[ and come back factored.
    """
    A = H.matrix if isinstance(H, HermitianMatrix) else H
    n = A.shape[0]
    if dense is None:
        dense = not hasattr(A, "tocsr") or n <= DENSE_LIMIT
    if dense:
        M = _dense(H)
        scale = max(1.0, float(np.abs(M).sum(axis=1).max())) if n else 1.0
        w, V = np.linalg.eigh(M)
        gap = 10 * SOLVER_TOL * scale
        near = np.flatnonzero(np.abs(w - E_F) < gap)
        if near.size:
            raise ProjectionError(
                f"E_F={E_F!r} is within {gap:.3g} of eigenvalue {w[near[0]]!r}"
            )
        V = V[:, w <= E_F]
        return Projection(matrix=V @ V.conj().T, source=f"spectral projection E_F={E_F!r}")
    Acsr = A.tocsr()
    src = H if isinstance(H, HermitianMatrix) else Acsr
    scale = float(abs(Acsr).sum(axis=1).max())
    gap = 10 * SOLVER_TOL * scale
    if count_below(src, E_F - gap) != count_below(src, E_F + gap):
        raise ProjectionError(f"E_F={E_F!r} is within {gap:.3g} of an eigenvalue")
    diag = Acsr.diagonal().real
    radius = np.asarray(abs(Acsr).sum(axis=1)).ravel() - np.abs(diag)
    lo = float(np.min(diag - radius)) - 1.0
    pairs = eigen_window(src, EnergyWindow(lo, E_F))
    return Projection(basis=pairs.vectors, source=f"spectral projection E_F={E_F!r}")


def relative_index(P: Projection, Q: Projection, power: int = 1, tol: float = 1e-6) -> int:
    """Ind(P; Q) = Tr (P - Q)^power for odd ``power`` (1 unless dense)."""
    if P.n != Q.n:
        raise ValueError(f"dimension mismatch: {P.n} vs {Q.n}")
    if power % 2 != 1:
        raise ValueError("power must be odd")
    if power == 1:
        t = P.trace() - Q.trace()
    else:
        D = P.dense - Q.dense
        t = float(np.real(np.trace(np.linalg.matrix_power(D, power))))
    r = round(t)
    if abs(t - r) > tol:
        raise NonIntegerIndex(f"Tr(P-Q)^{power} = {t!r} is not an integer")
    return int(r)


def index_identities_check(P: Projection, Q: Projection, R: Projection, U) -> dict:
    """Additivity, antisymmetry and unitary invariance; failures are reported."""
    U = np.asarray(U)
    out = {}
    pq, qr, pr = relative_index(P, Q), relative_index(Q, R), relative_index(P, R)
    out["additivity"] = pr == pq + qr
    out["antisymmetry"] = pq == -relative_index(Q, P)
    out["unitary_invariance"] = relative_index(P.conjugated(U), Q.conjugated(U)) == pq
    out["values"] = {"PQ": pq, "QR": qr, "PR": pr}
    out["ok"] = out["additivity"] and out["antisymmetry"] and out["unitary_invariance"]
    return out


def crossing_vs_index(branchset: BranchSet, H0, E_F: float) -> dict:
    """Compare the branch crossing count with Tr P^c = Ind(P; P^nc).

    P is the spectral projection of H(0) below E_F; P^c spans the phi = 0
    eigenvectors of branches starting below E_F that rise above it; P^nc is
    the complement of P^c inside P.
    """
    q_branch = crossing_count(branchset, E_F)
    P = spectral_projection(H0, E_F)
    cross = [b for b in branchset.branches
             if b.start == 0 and b.energies[0] < E_F and np.any(b.energies > E_F)]
    n = P.n
    if cross:
        C = np.column_stack([b.vectors[0] for b in cross])
    else:
        C = np.zeros((n, 0), dtype=complex)
    leak = float(np.linalg.norm(C - P.apply(C))) if C.size else 0.0
    if leak > 1e-6:
        raise ProjectionError(f"crossing eigenvectors leave the Fermi projection (defect {leak:.3g})")
    Pc = Projection.from_basis(C, source="crossing branches")
    # orthonormal basis of ran(P) minus ran(C)
    if P.basis is not None:
        VP = P.basis
    else:
        w, Vd = np.linalg.eigh(P.dense)
        VP = Vd[:, w > 0.5]
    R = VP - C @ (C.conj().T @ VP) if C.size else VP
    u, s, _ = np.linalg.svd(R, full_matrices=False) if R.size else (R, np.zeros(0), None)
    Pnc = Projection.from_basis(u[:, s > 0.5], source="non-crossing part")
    idx = relative_index(P.from_basis(VP), Pnc)
    tr_c = Pc.rank()
    return {
        "E_F": E_F,
        "Q_branches": q_branch,
        "trace_Pc": tr_c,
        "index": idx,
        "equal": q_branch == tr_c == idx,
    }


# ---------------------------------------------------------------------------
# decoupling


@dataclass
class DecouplingRow:
    D: float
    max_shift: float
    max_shift_direct: float
    projector_deviation: float
    levels: int


@dataclass
class DecouplingTable:
    rows: list
    slope: float
    monotone: bool
    phi: float
    window: EnergyWindow

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["D", "max_dE", "max_dE_direct", "norm_dP", "levels"])
            for r in self.rows:
                wr.writerow([f"{r.D:.17g}", f"{r.max_shift:.17g}", f"{r.max_shift_direct:.17g}",
                             f"{r.projector_deviation:.17g}", r.levels])

    def to_dict(self) -> dict:
        return {
            "phi": self.phi,
            "window": [self.window.lo, self.window.hi],
            "slope": self.slope,
            "monotone": self.monotone,
            "rows": [r.__dict__ for r in self.rows],
        }


def clean_edge_modes(params: PhysicalParams, grid: GridSpec, phi: float,
                     window: EnergyWindow, edge_cut: float | None = None):
    """Right-edge eigenpairs of the clean cylinder, built from the 1D modes.

    The clean operator separates in y; mode m has energy eps_0 of
    h_{(2 pi m + phi)/L} and eigenvector phi_0(x) exp(2 pi i m y / L).
    """
    if edge_cut is None:
        edge_cut = 0.5 * grid.x_min
    hy = grid.hy(params.L)
    x, y = grid.x, grid.y(params.L)
    right = x > edge_cut
    # y-momentum range whose guiding centre lies on the grid
    m_lo = math.floor((params.L * params.B * grid.x_min - phi) / (2 * math.pi)) - 1
    m_hi = math.ceil((params.L * params.B * grid.x_max - phi) / (2 * math.pi)) + 1
    out = []
    for m in range(m_lo, m_hi + 1):
        k = (2 * math.pi * m + phi) / params.L
        vals, vecs = build_edge_1d(params, x, k, hy).eigh(3)
        for e, v in zip(vals, vecs.T):
            if window.contains(e) and np.sum(v[right] ** 2) > 0.5:
                psi = np.outer(np.exp(2j * math.pi * m * y / params.L), v).ravel()
                out.append((float(e), m, psi / math.sqrt(grid.ny)))
    out.sort(key=lambda t: t[0])
    return out


def decoupling_compare(params: PhysicalParams, grid: GridSpec, disorder: DisorderField,
                       D_list, phi: float = 0.0, window: EnergyWindow | None = None,
                       edge_cut: float | None = None) -> DecouplingTable:
    """Eigenvalue and projector deviation between H_D and the clean edge H_e.

    H_D keeps the disorder only at x <= -D.  Right-edge levels are matched
    by proximity.  The shift is evaluated through the exact identity
    E_D - E_e = <psi_e|V_D|psi_D> / <psi_e|psi_D>, which stays accurate long
    after the plain difference drowns in rounding; both are reported.
    """
    D_list = [float(d) for d in D_list]
    if any(b <= a for a, b in zip(D_list, D_list[1:])):
        raise ValueError("D values must be strictly increasing")
    if any(d < 0 or d > -grid.x_min for d in D_list):
        raise ValueError(f"D values must lie in [0, {-grid.x_min}]")
    if window is None:
        window = gap_window(params)[0]
    if edge_cut is None:
        edge_cut = 0.5 * grid.x_min
    modes = clean_edge_modes(params, grid, phi, window, edge_cut)
    if not modes:
        raise ValueError(f"no clean edge level in ]{window.lo}, {window.hi}[")
    E_e = np.array([m[0] for m in modes])
    Psi_e = np.column_stack([m[2] for m in modes])
    mid = int(np.argmin(np.abs(E_e - window.center)))
    xs = np.tile(grid.x, grid.ny)
    rows = []
    for D in D_list:
        trunc = truncate_disorder(disorder, grid, D)
        H = build_hamiltonian(params, grid, trunc, phi)
        pairs = eigen_window(H, window)
        keep = np.sum(np.abs(pairs.vectors[xs > edge_cut, :]) ** 2, axis=0) > 0.5
        E_D, Psi_D = pairs.values[keep], pairs.vectors[:, keep]
        if E_D.size != E_e.size:
            raise ValueError(
                f"D={D}: {E_D.size} edge levels vs {E_e.size} clean ones; shrink the window"
            )
        r, c = linear_sum_assignment(np.abs(E_e[:, None] - E_D[None, :]))
        v = trunc.values.ravel(order="F")
        shifts, direct, dP = [], [], 0.0
        for i, j in zip(r, c):
            ov = np.vdot(Psi_e[:, i], Psi_D[:, j])
            shifts.append(abs(np.vdot(Psi_e[:, i], v * Psi_D[:, j]) / ov))
            direct.append(abs(E_D[j] - E_e[i]))
            if i == mid:
                # || P_D - P_e || for rank-one projections
                dP = float(np.linalg.norm(Psi_D[:, j] - Psi_e[:, i] * ov))
        rows.append(DecouplingRow(D, float(max(shifts)), float(max(direct)), dP, int(E_D.size)))
    dev = np.array([r.max_shift for r in rows])
    Ds = np.array(D_list)
    pos = dev > 0
    slope = (float(np.polyfit(Ds[pos], np.log(dev[pos]), 1)[0]) if pos.sum() >= 2 else math.nan)
    monotone = bool(np.all(np.diff(dev) < 0))
    return DecouplingTable(rows, slope, monotone, float(phi), window)


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
