"""Exactly solvable chiral edge model.

h(phi) = -i d/dy + phi/L + v(y) on a circle of length L has eigenvalues
e_m(phi) = (2 pi m + phi)/L + vbar, where vbar is the mean of v; only the
mean enters.  The model serves as a closed-form oracle for the flow,
spacing, winding and conductance machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .flow import (
    Branch,
    BranchSet,
    admissible_fermi_levels,
    crossing_count,
    edge_conductance,
    flow_rates,
    spacing_stats,
    verify_spectral_shift,
)
from .model import EnergyWindow


@dataclass(frozen=True)
class ToySpectrum:
    m_lo: int
    m_hi: int
    L: float
    vbar: float
    phi: float

    @property
    def m(self) -> np.ndarray:
        return np.arange(self.m_lo, self.m_hi + 1)

    @property
    def levels(self) -> np.ndarray:
        return (2 * math.pi * self.m + self.phi) / self.L + self.vbar

    @property
    def flow_rate(self) -> float:
        """de_m/dphi, the same for every level."""
        return 1.0 / self.L


def toy_spectrum(m_lo: int, m_hi: int, L: float, vbar: float = 0.0, phi: float = 0.0) -> ToySpectrum:
    if m_lo > m_hi:
        raise ValueError(f"need m_lo <= m_hi, got {m_lo} > {m_hi}")
    if not L > 0:
        raise ValueError(f"L must be positive, got {L}")
    return ToySpectrum(int(m_lo), int(m_hi), float(L), float(vbar), float(phi))


def _modes(m_lo, m_hi, L):
    m = np.arange(m_lo, m_hi + 1)
    n = m.size
    y = -L / 2 + L * np.arange(n) / n
    return np.exp(2j * math.pi * np.outer(y, m) / L) / math.sqrt(n)


def toy_hamiltonian(m_lo: int, m_hi: int, L: float, vbar: float, phi: float) -> np.ndarray:
    """Hermitian matrix on n = m_hi - m_lo + 1 sites with spectrum e_m(phi).

    The plane waves exp(2 pi i m y / L) sampled on n sites form a unitary,
    so the matrix is the band-limited version of h(phi) for constant v.
    """
    F = _modes(m_lo, m_hi, L)
    e = toy_spectrum(m_lo, m_hi, L, vbar, phi).levels
    return (F * e[None, :]) @ F.conj().T


def toy_branchset(m_lo: int, m_hi: int, L: float, vbar: float, delta: EnergyWindow,
                  phi_steps: int = 128) -> BranchSet:
    """Branches e_m(phi) on the flux grid, with the same layout as a sweep."""
    phis = np.linspace(0.0, 2 * math.pi, phi_steps + 1)
    F = _modes(m_lo, m_hi, L)
    branches = []
    for q, m in enumerate(range(m_lo, m_hi + 1)):
        e = (2 * math.pi * m + phis) / L + vbar
        vec = F[:, q]
        branches.append(Branch(0, e, np.full(phis.size, 1.0 / L), np.ones(phi_steps),
                               {0: vec, phi_steps: vec}))
    window = EnergyWindow(min(b.energies.min() for b in branches) - 1.0,
                          max(b.energies.max() for b in branches) + 1.0)
    levels = [np.sort([b.energies[p] for b in branches]) for p in range(phis.size)]
    return BranchSet(phis, branches, window, delta, float(L), levels)


def toy_numeric_check(L: float, v, n_sites: int, phi: float = 0.0, m_max: int = 3) -> float:
    """Largest |Re(numeric) - e_m(phi)| over |m| <= m_max.

    ``v`` is either a callable of y or samples on the n_sites grid.  The
    derivative is a forward (upwind) difference; the wrap-around bond carries
    exp(i phi), which is gauge-equivalent to the +phi/L term.
    """
    if n_sites < 32:
        raise ValueError(f"n_sites must be >= 32, got {n_sites}")
    h = L / n_sites
    y = -L / 2 + h * np.arange(n_sites)
    vs = np.asarray(v(y) if callable(v) else v, dtype=float)
    if vs.shape != (n_sites,):
        raise ValueError(f"expected {n_sites} samples of v, got shape {vs.shape}")
    A = np.zeros((n_sites, n_sites), dtype=complex)
    idx = np.arange(n_sites)
    A[idx, idx] = 1j / h + vs
    A[idx[:-1], idx[1:]] = -1j / h
    A[n_sites - 1, 0] = -1j / h * np.exp(1j * phi)
    ev = np.linalg.eigvals(A)
    exact = toy_spectrum(-m_max, m_max, L, float(np.mean(vs)), phi).levels
    err = 0.0
    for e in exact:
        j = int(np.argmin(np.abs(ev - e)))
        err = max(err, abs(ev[j].real - e))
    return err


def _window_modes(L, vbar, lo, hi):
    c = L / (2 * math.pi)
    return math.floor((lo - vbar) * c) - 1, math.ceil((hi - vbar) * c) + 1


def toy_suite(L: float = 200.0, vbar: float = 0.1, delta: EnergyWindow | None = None,
              phi_steps: int = 128, tol: float = 1e-12) -> dict:
    """Run every exact toy-model check; ``ok`` is the conjunction."""
    from .index import crossing_vs_index

    if delta is None:
        delta = EnergyWindow(0.9, 1.1)
    m_lo, m_hi = _window_modes(L, vbar, delta.lo - 0.5, delta.hi + 0.5)
    checks = {}

    s0 = toy_spectrum(m_lo, m_hi, L, vbar, 0.0)
    s2 = toy_spectrum(m_lo, m_hi, L, vbar, 2 * math.pi)
    H = toy_hamiltonian(m_lo, m_hi, L, vbar, 0.3)
    ev = np.linalg.eigvalsh(H)
    checks["spectrum_error"] = float(np.max(np.abs(ev - toy_spectrum(m_lo, m_hi, L, vbar, 0.3).levels)))
    checks["shift_error"] = float(np.max(np.abs(s2.levels[:-1] - s0.levels[1:])))

    bs = toy_branchset(m_lo, m_hi, L, vbar, delta, phi_steps)
    # finite differences of rounded levels: exact only to ~1e-12
    rates = flow_rates(bs)
    checks["flow_rate_error"] = float(np.max(np.abs(rates - 1.0)))
    st = spacing_stats(bs, delta, L, alpha=1.0, B=delta.center)
    checks["spacing_error"] = float(np.max(np.abs(st.spacings - 2 * math.pi / L)))
    checks["s_error"] = float(np.max(np.abs(st.s - 1.0)))
    checks["histogram_bins_used"] = int(np.count_nonzero(st.hist))
    checks["histogram_bin"] = [float(st.edges[i]) for i in np.flatnonzero(st.hist)]
    fermis = admissible_fermi_levels(bs, 5)
    checks["winding"] = [crossing_count(bs, e) for e in fermis]
    checks["shift_residual"] = verify_spectral_shift(bs)["residual"]
    sigma = edge_conductance(bs)
    checks["sigma_e"] = sigma
    checks["sigma_error"] = abs(sigma - 1 / (2 * math.pi))
    H0 = toy_hamiltonian(m_lo, m_hi, L, vbar, 0.0)
    cvi = [crossing_vs_index(bs, H0, float(e)) for e in fermis]
    checks["index_equal"] = all(c["equal"] and c["index"] == 1 for c in cvi)
    Ls, n = 10.0, 128
    checks["numeric_zero_mean"] = toy_numeric_check(Ls, lambda y: np.cos(2 * math.pi * y / Ls), n)
    checks["numeric_constant"] = toy_numeric_check(Ls, np.full(n, 0.3), n)
    checks["current_error"] = float(max(np.max(np.abs(b.currents - 1.0 / L)) for b in bs.branches))

    checks["ok"] = bool(
        checks["spectrum_error"] <= tol
        and checks["shift_error"] <= tol
        and checks["flow_rate_error"] <= 1e-9
        and checks["current_error"] == 0.0
        and checks["spacing_error"] <= tol
        and checks["s_error"] <= tol
        and checks["histogram_bins_used"] == 1
        and all(q == 1 for q in checks["winding"])
        and checks["shift_residual"] <= tol
        and checks["sigma_error"] <= tol
        and checks["index_equal"]
        and max(checks["numeric_zero_mean"], checks["numeric_constant"]) <= Ls / n
    )
    checks["parameters"] = {"L": L, "vbar": vbar, "delta": [delta.lo, delta.hi],
                            "m_range": [m_lo, m_hi], "phi_steps": phi_steps}
    return checks
