"""Flux sweeps, branch tracking and the flow/spacing/conductance checks.

The finite strip has a second, artificial boundary at ``x_min`` whose edge
states run the other way.  Only states living mostly to the right of
``edge_cut`` (by default ``x_min / 2``) are tracked: those are the edge
states of the physical wall.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .hamiltonian import build_hamiltonian, hamiltonian_derivative
from .model import DisorderField, EnergyWindow, GridSpec, PhysicalParams, gap_window
from .spectra import eigen_window

OVERLAP_MIN = 0.9
DEGENERACY_GAP = 1e-10
ROTATE_GAP = 1e-9


class TrackingError(RuntimeError):
    pass


class FermiLevelError(ValueError):
    pass


class TooFewLevels(ValueError):
    pass


@dataclass(eq=False)
class Branch:
    start: int
    energies: np.ndarray
    currents: np.ndarray
    overlaps: np.ndarray
    vectors: dict = field(default_factory=dict, repr=False)
    lost_start: bool = False
    lost_end: bool = False

    @property
    def stop(self) -> int:
        return self.start + self.energies.size

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.start, self.stop)

    def energy_at(self, p: int) -> float:
        return float(self.energies[p - self.start])

    def covers(self, p: int) -> bool:
        return self.start <= p < self.stop


@dataclass(eq=False)
class BranchSet:
    """Tracked eigenvalue branches E_k(phi) over a uniform grid on [0, 2 pi]."""

    phis: np.ndarray
    branches: list
    window: EnergyWindow
    delta: EnergyWindow
    L: float
    window_levels: list = field(default_factory=list, repr=False)
    degeneracies: list = field(default_factory=list)
    breaks: list = field(default_factory=list)

    @property
    def steps(self) -> int:
        return self.phis.size - 1

    @property
    def dphi(self) -> float:
        return float(self.phis[1] - self.phis[0])

    def complete(self) -> list:
        return [b for b in self.branches if b.start == 0 and b.stop == self.phis.size]

    def levels_at(self, p: int) -> np.ndarray:
        e = [b.energy_at(p) for b in self.branches if b.covers(p)]
        return np.sort(np.asarray(e, dtype=float))

    def slopes(self, branch: Branch) -> np.ndarray:
        """Finite-difference dE/dphi along a branch (centred inside)."""
        if branch.energies.size >= 3:
            return np.gradient(branch.energies, self.dphi, edge_order=2)
        return branch.currents.copy()

    def touches(self, branch: Branch, window: EnergyWindow) -> bool:
        return bool(np.any(window.contains(branch.energies)))

    def write_csv(self, path) -> None:
        """Columns: phi, branch, E, dE/dphi (finite difference), j (Feynman-Hellmann)."""
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["phi", "k", "E", "dE_dphi", "j_k"])
            for k, b in enumerate(self.branches):
                slope = self.slopes(b)
                for q, p in enumerate(b.indices):
                    wr.writerow([f"{self.phis[p]:.17g}", k, f"{b.energies[q]:.17g}",
                                 f"{slope[q]:.17g}", f"{b.currents[q]:.17g}"])


# ---------------------------------------------------------------------------
# sweep


@dataclass(frozen=True)
class _SolveTask:
    params: PhysicalParams
    grid: GridSpec
    disorder: DisorderField | None
    phi: float
    window: EnergyWindow
    edge_cut: float


def _split_degenerate(values, vectors, dH, gap=ROTATE_GAP):
    """Rotate eigenvectors of (numerically) degenerate clusters so that
    dH/dphi is diagonal on each cluster: these are the analytic branches."""
    vectors = vectors.copy()
    start = 0
    for i in range(1, values.size + 1):
        if i == values.size or values[i] - values[i - 1] >= gap:
            if i - start > 1:
                Vc = vectors[:, start:i]
                _, U = np.linalg.eigh(Vc.conj().T @ (dH @ Vc))
                vectors[:, start:i] = Vc @ U
            start = i
    return vectors


def _solve_point(task: _SolveTask):
    H = build_hamiltonian(task.params, task.grid, task.disorder, task.phi)
    pairs = eigen_window(H, task.window)
    dH = hamiltonian_derivative(task.params, task.grid, task.phi)
    allvecs = _split_degenerate(pairs.values, pairs.vectors, dH)
    xs = H.x_of_sites()
    right = np.sum(np.abs(allvecs[xs > task.edge_cut, :]) ** 2, axis=0) > 0.5
    vecs = allvecs[:, right]
    currents = np.real(np.einsum("ij,ij->j", vecs.conj(), dH @ vecs))
    return pairs.values.copy(), pairs.values[right].copy(), vecs, currents


def tracking_window(params: PhysicalParams) -> EnergyWindow:
    """Delta widened by the maximal flux-period drift 2 pi sqrt(3B)/L, clipped to the gap."""
    gap, delta = gap_window(params)
    margin = 2 * math.pi * math.sqrt(3 * params.B) / params.L
    return delta.widened(margin).intersect(gap)


def sweep_flux(params: PhysicalParams, grid: GridSpec, disorder: DisorderField | None,
               phi_steps: int = 128, window: EnergyWindow | None = None,
               edge_cut: float | None = None, workers: int = 1,
               keep_vectors: bool = False, min_steps: int = 64) -> BranchSet:
    """Solve H(phi) on a uniform flux grid and link eigenpairs into branches.

    Consecutive points are matched by maximal eigenvector overlap (Hungarian
    assignment, energy proximity as tie-breaker).  A link needs overlap
    >= 0.9; a branch that cannot be continued away from the window edges is a
    tracking break, and a break on any branch that visits Delta aborts.
    """
    if phi_steps < min_steps:
        raise ValueError(f"phi_steps must be >= {min_steps}, got {phi_steps}")
    _, delta = gap_window(params)
    if window is None:
        window = tracking_window(params)
    if edge_cut is None:
        edge_cut = 0.5 * grid.x_min
    phis = np.linspace(0.0, 2 * math.pi, phi_steps + 1)
    tasks = [_SolveTask(params, grid, disorder, float(p), window, edge_cut) for p in phis]
    # slack for a level to leave the window between two grid points
    edge_margin = 2.0 * (phis[1] - phis[0]) * math.sqrt(3 * params.B) / params.L
    tracker = _Tracker(phis, window, delta, params.L, edge_margin, keep_vectors)

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunk = 2 * workers
            for c in range(0, len(tasks), chunk):
                for res in pool.map(_solve_point, tasks[c:c + chunk]):
                    tracker.push(*res)
    else:
        for t in tasks:
            tracker.push(*_solve_point(t))
    return tracker.finish()


class _Tracker:
    def __init__(self, phis, window, delta, L, edge_margin, keep_vectors):
        self.phis = phis
        self.window = window
        self.delta = delta
        self.L = L
        self.edge_margin = edge_margin
        self.keep_vectors = keep_vectors
        self.p = -1
        self.active = []  # (branch record, last vector)
        self.done = []
        self.window_levels = []
        self.degeneracies = []
        self.breaks = []

    def _near_edge(self, e):
        return e < self.window.lo + self.edge_margin or e > self.window.hi - self.edge_margin

    def _new(self, p, e, j, v, lost):
        rec = {"start": p, "E": [e], "J": [j], "O": [], "vecs": {p: v}, "lost_start": lost,
               "lost_end": False}
        return [rec, v]

    def push(self, all_values, values, vecs, currents):
        self.p += 1
        p = self.p
        self.window_levels.append(all_values)
        gaps = np.diff(values)
        for i in np.flatnonzero(gaps < DEGENERACY_GAP):
            self.degeneracies.append((p, float(values[i]), float(gaps[i])))
        if p == 0:
            self.active = [self._new(0, values[i], currents[i], vecs[:, i], False)
                           for i in range(values.size)]
            return
        prev_vecs = (np.column_stack([a[1] for a in self.active]) if self.active
                     else np.zeros((vecs.shape[0], 0)))
        prev_E = np.array([a[0]["E"][-1] for a in self.active])
        ov = np.abs(prev_vecs.conj().T @ vecs) if self.active and values.size else np.zeros(
            (len(self.active), values.size))
        matched_new = set()
        survivors = []
        if ov.size:
            scale = max(self.window.width, 1e-300)
            cost = -ov + 1e-6 * np.abs(prev_E[:, None] - values[None, :]) / scale
            rows, cols = linear_sum_assignment(cost)
            pairs = {r: c for r, c in zip(rows, cols) if ov[r, c] >= OVERLAP_MIN}
        else:
            pairs = {}
        for r, a in enumerate(self.active):
            rec, _ = a
            c = pairs.get(r)
            if c is None:
                e_old = rec["E"][-1]
                lost = not self._near_edge(e_old)
                if lost:
                    best = float(ov[r].max()) if ov.shape[1] else 0.0
                    self.breaks.append({"phi_index": p, "energy": float(e_old), "overlap": best})
                rec["lost_end"] = lost
                rec["vecs"][p - 1] = a[1]
                self.done.append(rec)
                continue
            matched_new.add(c)
            rec["E"].append(values[c])
            rec["J"].append(currents[c])
            rec["O"].append(ov[r, c])
            if self.keep_vectors:
                rec["vecs"][p] = vecs[:, c]
            survivors.append([rec, vecs[:, c]])
        for c in range(values.size):
            if c not in matched_new:
                lost = not self._near_edge(values[c])
                if lost:
                    self.breaks.append({"phi_index": p, "energy": float(values[c]), "overlap": None})
                survivors.append(self._new(p, values[c], currents[c], vecs[:, c], lost))
        self.active = survivors

    def finish(self) -> BranchSet:
        last = self.p
        for rec, v in self.active:
            rec["vecs"][last] = v
            self.done.append(rec)
        branches = []
        for rec in self.done:
            vecs = rec["vecs"]
            stop = rec["start"] + len(rec["E"])
            if not self.keep_vectors:
                vecs = {k: v for k, v in vecs.items() if k in (rec["start"], stop - 1)}
            branches.append(Branch(rec["start"], np.array(rec["E"], dtype=float),
                                   np.array(rec["J"], dtype=float), np.array(rec["O"], dtype=float),
                                   vecs, rec["lost_start"], rec["lost_end"]))
        branches.sort(key=lambda b: (b.start, b.energies[0]))
        bs = BranchSet(self.phis, branches, self.window, self.delta, self.L,
                       self.window_levels, self.degeneracies, self.breaks)
        for b in branches:
            if (b.lost_start or b.lost_end) and bs.touches(b, self.delta):
                raise TrackingError(
                    f"lost track of a branch inside Delta near E={b.energies[-1]:.6g}; "
                    "refine the flux grid (raise phi_steps)"
                )
        return bs


# ---------------------------------------------------------------------------
# checks


def branch_current(branchset: BranchSet, k: int, p: int, dH) -> float:
    """Feynman-Hellmann current <psi|dH/dphi|psi> from a stored eigenvector."""
    b = branchset.branches[k]
    if p not in b.vectors:
        raise KeyError(f"no eigenvector stored for branch {k} at phi index {p}")
    v = b.vectors[p]
    return float(np.real(np.vdot(v, dH @ v)))


def flow_rates(branchset: BranchSet, window: EnergyWindow | None = None) -> np.ndarray:
    """L dE/dphi (finite differences) at every branch point inside the window."""
    window = branchset.delta if window is None else window
    out = []
    for b in branchset.branches:
        inside = window.contains(b.energies)
        if inside.any():
            out.append(branchset.L * branchset.slopes(b)[inside])
    return np.concatenate(out) if out else np.zeros(0)


def verify_flow_bound(branchset: BranchSet, alpha: float | None, L: float | None = None,
                      rtol: float = 0.0) -> tuple[float, bool]:
    """Minimum in-window L dE/dphi and whether it clears alpha (and zero)."""
    if L is not None and not math.isclose(L, branchset.L):
        raise ValueError("L does not match the branch set")
    rates = flow_rates(branchset)
    if rates.size == 0:
        raise TooFewLevels("no branch point inside Delta")
    lo = float(rates.min())
    ok = lo > 0
    if alpha is not None:
        ok = ok and lo >= alpha * (1 - rtol)
    return lo, bool(ok)


def verify_spectral_shift(branchset: BranchSet) -> dict:
    """Compare E_k(2 pi) with the next level up at phi = 0.

    Every branch tracked over the whole period whose successor at phi = 0 is
    also tracked takes part; the residual should vanish if the flow moves each
    level up by exactly one slot.
    """
    P = branchset.steps
    levels0 = branchset.levels_at(0)
    levels2pi = branchset.levels_at(P)
    full = branchset.complete()
    res = []
    for b in full:
        e0, e1 = b.energies[0], b.energies[-1]
        i = int(np.argmin(np.abs(levels0 - e0)))
        if i + 1 >= levels0.size:
            continue
        res.append(abs(e1 - levels0[i + 1]))
    if not res:
        raise TooFewLevels("no complete branch with a successor level")
    n_start = np.sum(levels0 > levels0.min() - 1)
    return {
        "residual": float(max(res)),
        "branches_checked": len(res),
        "levels_phi0": int(n_start),
        "levels_phi2pi": int(levels2pi.size),
    }


def gauge_multiset_residual(branchset: BranchSet) -> float:
    """Max difference between the sorted window spectra at phi = 0 and phi = 2 pi."""
    a = np.sort(branchset.window_levels[0])
    b = np.sort(branchset.window_levels[-1])
    if a.size != b.size:
        return math.inf
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def _endpoint_levels(branchset):
    return np.concatenate([branchset.levels_at(0), branchset.levels_at(branchset.steps)])


def crossing_count(branchset: BranchSet, E_F: float, tol: float = 1e-8) -> int:
    """Signed number of branch crossings of E_F over one flux period."""
    ends = _endpoint_levels(branchset)
    if ends.size and np.min(np.abs(ends - E_F)) <= tol:
        raise FermiLevelError(
            f"E_F={E_F!r} sits on an endpoint eigenvalue; shift it by half a level spacing"
        )
    q = 0
    for b in branchset.branches:
        above = b.energies > E_F
        d = np.diff(above.astype(int))
        q += int(d.sum())
    return q


def admissible_fermi_levels(branchset: BranchSet, n: int = 5) -> np.ndarray:
    """n Fermi energies spread over Delta, kept away from endpoint levels."""
    delta = branchset.delta
    ends = np.sort(_endpoint_levels(branchset))
    lv = branchset.levels_at(0)
    sp_ = np.diff(lv)
    half = 0.5 * (float(np.mean(sp_)) if sp_.size else 0.25 * delta.width)
    guard = 1e-3 * half
    out = []
    for e in delta.lo + delta.width * (np.arange(n) + 0.5) / n:
        tries = 0
        while ends.size and np.min(np.abs(ends - e)) < guard and tries < 4:
            e = e + half if e + half < delta.hi else e - half
            tries += 1
        out.append(e)
    return np.asarray(out)


@dataclass
class SpacingStats:
    levels: np.ndarray
    spacings: np.ndarray
    s: np.ndarray
    hist: np.ndarray
    edges: np.ndarray
    lower: float | None
    upper: float
    in_bounds: bool

    def write_csv(self, spacings_path, hist_path) -> None:
        with open(spacings_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["E_k", "spacing", "s"])
            for e, d, s in zip(self.levels, self.spacings, self.s):
                wr.writerow([f"{e:.17g}", f"{d:.17g}", f"{s:.17g}"])
        with open(hist_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["s_lo", "s_hi", "count"])
            for a, b, c in zip(self.edges[:-1], self.edges[1:], self.hist):
                wr.writerow([f"{a:.17g}", f"{b:.17g}", int(c)])


def spacing_stats(levels, delta: EnergyWindow, L: float, alpha: float | None = None,
                  B: float | None = None, rtol: float = 0.0, atol: float = 1e-12,
                  density_window: int = 5, bins: int = 30, s_max: float = 3.0) -> SpacingStats:
    """Spacings E_{k+1} - E_k for levels E_k in Delta, and the rescaled s values.

    ``levels`` is either a BranchSet (phi = 0 levels are used) or the sorted
    levels themselves.  The density at E_k is the inverse local mean spacing
    over ``density_window`` consecutive levels, divided by L.
    """
    if isinstance(levels, BranchSet):
        levels = levels.levels_at(0)
    lv = np.sort(np.asarray(levels, dtype=float))
    if lv.size < 2 or not delta.contains(lv[:-1]).any():
        raise TooFewLevels(f"need two levels with one in Delta, got {lv.size}; use a larger L")
    ks = np.flatnonzero(delta.contains(lv[:-1]))
    gaps = lv[ks + 1] - lv[ks]
    half = density_window // 2
    mean_local = np.empty(ks.size)
    for q, k in enumerate(ks):
        a = max(0, k - half)
        b = min(lv.size - 1, a + density_window - 1)
        a = max(0, b - density_window + 1)
        mean_local[q] = (lv[b] - lv[a]) / (b - a)
    rho = 1.0 / (L * mean_local)
    s = L * rho * gaps
    edges = np.linspace(0.0, s_max, bins + 1)
    # exact s = 1 must not straddle the bin edge at 1 through rounding
    hist, _ = np.histogram(np.round(s, 9), bins=edges)
    upper = 2 * math.pi * math.sqrt(3 * (B if B is not None else delta.center)) / L
    lower = None if alpha is None else 2 * math.pi * alpha / L
    ok = bool(np.all(gaps <= upper * (1 + rtol) + atol))
    if lower is not None:
        ok = ok and bool(np.all(gaps >= lower * (1 - rtol) - atol))
    return SpacingStats(lv[ks], gaps, s, hist, edges, lower, upper, ok)


def _segment_integral(e0, e1, j0, j1, window):
    """Integral over a unit-parameter segment of the linear current while the
    linearly interpolated energy lies in the window."""
    lo, hi = window.lo, window.hi
    if e1 == e0:
        if lo < e0 < hi:
            return 0.5 * (j0 + j1)
        return 0.0
    ta = (lo - e0) / (e1 - e0)
    tb = (hi - e0) / (e1 - e0)
    t0 = max(0.0, min(ta, tb))
    t1 = min(1.0, max(ta, tb))
    if t1 <= t0:
        return 0.0
    # trapezoid of the linear current on [t0, t1]
    ja = j0 + (j1 - j0) * t0
    jb = j0 + (j1 - j0) * t1
    return 0.5 * (ja + jb) * (t1 - t0)


def edge_conductance(branchset: BranchSet, delta: EnergyWindow | None = None) -> float:
    """Flux-averaged edge current per unit energy in Delta.

    sigma_e = (1 / (2 pi |Delta|)) sum_k int dphi dE_k/dphi 1[E_k in Delta],
    with the Feynman-Hellmann currents integrated by the trapezoid rule on
    the sub-interval of each flux step where the branch lies in Delta.
    """
    delta = branchset.delta if delta is None else delta
    h = branchset.dphi
    total = 0.0
    for b in branchset.branches:
        E, J = b.energies, b.currents
        for q in range(E.size - 1):
            total += h * _segment_integral(E[q], E[q + 1], J[q], J[q + 1], delta)
    return total / (2 * math.pi * delta.width)


@dataclass
class FlowReport:
    min_flow_rate: float
    max_flow_rate: float
    alpha: float | None
    flow_bound_ok: bool
    velocity_bound_ok: bool
    spacings: list
    spacing_bounds_ok: bool
    crossing_counts: dict
    sigma_e: float
    shift_residual: float
    gauge_residual: float
    degeneracies: list
    tracking_breaks: int
    extra: dict = field(default_factory=dict)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(_jsonable(self.__dict__), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(f"{float(obj):.17g}") if math.isfinite(obj) else str(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def flow_report(branchset: BranchSet, alpha: float | None, B: float,
                n_fermi: int = 5, rtol: float = 0.0) -> FlowReport:
    rates = flow_rates(branchset)
    lo, ok = verify_flow_bound(branchset, alpha, rtol=rtol)
    vmax = float(rates.max())
    st = spacing_stats(branchset, branchset.delta, branchset.L, alpha, B, rtol=rtol)
    fermis = admissible_fermi_levels(branchset, n_fermi)
    counts = {f"{e:.17g}": crossing_count(branchset, e) for e in fermis}
    shift = verify_spectral_shift(branchset)
    return FlowReport(
        min_flow_rate=lo,
        max_flow_rate=vmax,
        alpha=alpha,
        flow_bound_ok=ok,
        velocity_bound_ok=vmax <= math.sqrt(3 * B) * (1 + rtol),
        spacings=st.spacings.tolist(),
        spacing_bounds_ok=st.in_bounds,
        crossing_counts=counts,
        sigma_e=edge_conductance(branchset),
        shift_residual=shift["residual"],
        gauge_residual=gauge_multiset_residual(branchset),
        degeneracies=list(branchset.degeneracies),
        tracking_breaks=len(branchset.breaks),
        extra={"shift": shift},
    )


def theoretical_alpha(params: PhysicalParams, grid: GridSpec, phis=None,
                      dk: float = 0.01) -> dict:
    """Velocity bound alpha from the clean lattice branch eps_0.

    v_F is evaluated at each flux value in ``phis`` (default: 17 points on
    [0, 2 pi]) and the minimum is used.
    """
    from .spectra import alpha_bound, edge_branches, fermi_velocity

    _, delta = gap_window(params)
    hy = grid.hy(params.L)
    k_lo = params.B * 0.5 * grid.x_min
    k_hi = params.B * grid.x_max
    k = np.arange(k_lo, k_hi + dk / 2, dk)
    table = edge_branches(params, grid.x, k, n_max=0, hy=hy)
    if phis is None:
        phis = np.linspace(0.0, 2 * math.pi, 17)
    per_phi = [fermi_velocity(table, delta, params.L, float(p)) for p in phis]
    vF = min(v for _, _, v in per_phi)
    alpha = alpha_bound(vF, params.B, params.w, params.delta)
    return {"alpha": alpha, "v_F": vF, "M": [m for m, _, _ in per_phi],
            "mbar": [b for _, b, _ in per_phi]}
