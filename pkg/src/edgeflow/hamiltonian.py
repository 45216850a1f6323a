"""Finite-difference magnetic Hamiltonians on the flux-threaded cylinder.

Sites are ordered with x running fastest: ``site = j * nx + i`` for the
point (x_i, y_j).  The y kinetic term carries the Peierls phase
``exp(-i hy (B x_i - phi / L))`` on every +y bond, so that a plane wave
``exp(i k y)`` sees ``(1 - cos(hy (k - B x + phi / L))) / hy**2``, the lattice
form of ``(p_y - B x + phi / L)**2 / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .model import DisorderField, GridSpec, PhysicalParams, ParameterError, wall_potential


@dataclass(eq=False)
class HermitianMatrix:
    """Sparse Hermitian lattice Hamiltonian with its site map."""

    matrix: sp.csr_matrix = field(repr=False)
    nx: int
    ny: int
    phi: float
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def shape(self):
        return self.matrix.shape

    def site(self, i, j):
        return np.asarray(j) * self.nx + np.asarray(i)

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def slices(self) -> list[np.ndarray]:
        """Site indices of each y column, in y order."""
        base = np.arange(self.nx)
        return [base + j * self.nx for j in range(self.ny)]

    def x_of_sites(self) -> np.ndarray:
        return np.tile(self.x, self.ny)

    def hermiticity_defect(self) -> float:
        d = self.matrix - self.matrix.getH()
        return float(abs(d).max()) if d.nnz else 0.0

    def write_triplets(self, path) -> None:
        """Write the stored entries as ``row col re im`` lines."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w") as fh:
            fh.write(f"# n={self.n} nx={self.nx} ny={self.ny} phi={self.phi!r}\n")
            for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
                fh.write(f"{r} {c} {v.real:.17g} {v.imag:.17g}\n")


def read_triplets(path) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    n = None
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                for tok in line[1:].split():
                    if tok.startswith("n="):
                        n = int(tok[2:])
                continue
            r, c, re, im = line.split()
            rows.append(int(r))
            cols.append(int(c))
            vals.append(complex(float(re), float(im)))
    if n is None:
        n = max(max(rows), max(cols)) + 1
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _bond_phase(params: PhysicalParams, x: np.ndarray, hy: float, phi: float) -> np.ndarray:
    return np.exp(-1j * hy * (params.B * x - phi / params.L))


def _onsite(params, grid, disorder):
    hx, hy = grid.hx, grid.hy(params.L)
    diag = np.empty(grid.shape)
    diag[:] = (1.0 / hx**2 + 1.0 / hy**2 + wall_potential(params, grid.x))[:, None]
    if disorder is not None:
        if disorder.shape != grid.shape:
            raise ParameterError(
                f"disorder shape {disorder.shape} does not match grid {grid.shape}"
            )
        diag += disorder.values
    # column-major flattening gives x fastest
    return diag.ravel(order="F")


def build_hamiltonian(params: PhysicalParams, grid: GridSpec,
                      disorder: DisorderField | None, phi: float) -> HermitianMatrix:
    """Discretize H(phi) on the grid; ``disorder=None`` gives the clean edge Hamiltonian."""
    nx, ny = grid.shape
    n = nx * ny
    hx, hy = grid.hx, grid.hy(params.L)
    diag = _onsite(params, grid, disorder)

    sites = np.arange(n).reshape(ny, nx)  # sites[j, i]
    # x bonds (Dirichlet at both ends)
    xr = sites[:, :-1].ravel()
    xc = sites[:, 1:].ravel()
    xv = np.full(xr.size, -0.5 / hx**2, dtype=complex)
    # +y bonds, periodic
    yr = sites.ravel()
    yc = np.roll(sites, -1, axis=0).ravel()
    yv = np.tile(-0.5 / hy**2 * _bond_phase(params, grid.x, hy, phi), ny)

    rows = np.concatenate([np.arange(n), xr, xc, yr, yc])
    cols = np.concatenate([np.arange(n), xc, xr, yc, yr])
    vals = np.concatenate([diag.astype(complex), xv, xv.conj(), yv, yv.conj()])
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    mat.sum_duplicates()
    return HermitianMatrix(mat, nx, ny, float(phi), grid.x.copy(), grid.y(params.L))


def hamiltonian_derivative(params: PhysicalParams, grid: GridSpec, phi: float) -> sp.csr_matrix:
    """Analytic dH/dphi; only the +y bond phases depend on the flux."""
    nx, ny = grid.shape
    n = nx * ny
    hy = grid.hy(params.L)
    sites = np.arange(n).reshape(ny, nx)
    yr = sites.ravel()
    yc = np.roll(sites, -1, axis=0).ravel()
    bond = -0.5 / hy**2 * _bond_phase(params, grid.x, hy, phi)
    dv = np.tile(bond * (1j * hy / params.L), ny)
    rows = np.concatenate([yr, yc])
    cols = np.concatenate([yc, yr])
    vals = np.concatenate([dv, dv.conj()])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def gauge_unitary(H: HermitianMatrix, L: float, winding: int = 1) -> np.ndarray:
    """Diagonal of the multiplication operator exp(2 pi i winding y / L)."""
    return np.repeat(np.exp(2j * np.pi * winding * H.y / L), H.nx)


def gauge_shift_check(H_shifted: HermitianMatrix, H: HermitianMatrix, L: float,
                      winding: int = 1) -> float:
    """Max entrywise deviation of U H(phi + 2 pi) U^dagger from H(phi).

    ``winding`` selects the unitary exp(2 pi i winding y / L); only
    ``winding=1`` is the true gauge map.
    """
    if H_shifted.shape != H.shape or H_shifted.nx != H.nx:
        raise ValueError(f"dimension mismatch: {H_shifted.shape} vs {H.shape}")
    u = gauge_unitary(H, L, winding)
    conj = sp.diags(u) @ H_shifted.matrix @ sp.diags(u.conj())
    d = (conj - H.matrix).tocoo()
    return float(np.abs(d.data).max()) if d.nnz else 0.0


@dataclass(frozen=True, eq=False)
class Tridiagonal1D:
    """Real symmetric tridiagonal h_k on the x grid."""

    diag: np.ndarray
    off: np.ndarray
    k: float

    def eigvalsh(self, n: int | None = None) -> np.ndarray:
        sel = "a" if n is None else "i"
        rng = None if n is None else (0, n - 1)
        return sla.eigvalsh_tridiagonal(self.diag, self.off, select=sel, select_range=rng)

    def eigh(self, n: int | None = None):
        sel = "a" if n is None else "i"
        rng = None if n is None else (0, n - 1)
        return sla.eigh_tridiagonal(self.diag, self.off, select=sel, select_range=rng)

    def toarray(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.off, 1) + np.diag(self.off, -1)


def transverse_energy(params: PhysicalParams, x, k: float, hy: float | None = None):
    """(k - Bx)**2 / 2, or its lattice form when ``hy`` is given."""
    q = k - params.B * np.asarray(x)
    if hy is None:
        return 0.5 * q**2
    return (1.0 - np.cos(hy * q)) / hy**2


def build_edge_1d(params: PhysicalParams, x: np.ndarray, k: float,
                  hy: float | None = None) -> Tridiagonal1D:
    """h_k = p_x**2/2 + (k - Bx)**2/2 + W(x) with Dirichlet ends.

    ``x`` must be uniformly spaced interior points.  Passing the cylinder's
    ``hy`` swaps in the lattice y dispersion, which makes the 2D clean
    spectrum exactly the union of h_{2 pi m/L + phi/L} spectra.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ParameterError("x grid must be one-dimensional with at least two points")
    hx = x[1] - x[0]
    if not np.allclose(np.diff(x), hx, rtol=1e-9, atol=1e-12):
        raise ParameterError("x grid must be uniform")
    diag = 1.0 / hx**2 + transverse_energy(params, x, k, hy) + wall_potential(params, x)
    off = np.full(x.size - 1, -0.5 / hx**2)
    return Tridiagonal1D(np.asarray(diag, dtype=float), off, float(k))


def truncate_disorder(disorder: DisorderField, grid: GridSpec, D: float) -> DisorderField:
    """Keep V only at x <= -D."""
    if D < 0:
        raise ParameterError(f"D must be non-negative, got {D}")
    values = disorder.values.copy()
    values[grid.x > -D + 1e-9 * grid.hx, :] = 0.0
    return DisorderField(seed=disorder.seed, w=disorder.w, values=values)
