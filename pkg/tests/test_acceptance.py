"""Acceptance criteria 1-9, each run at its stated tolerance.

The production sweeps (B=1, w=0.02, delta=0.05, L in {20, 40}, clean plus
three seeds, 128 flux steps on one core) take about 20 minutes in total and
are shared between criteria 3-7 and 9.
"""

import math
import time
from functools import lru_cache

import numpy as np
import pytest

from edgeflow import spectra
from edgeflow.cli import load_config, main, random_identity_trials, run_branches
from edgeflow.flow import (
    admissible_fermi_levels,
    crossing_count,
    edge_conductance,
    flow_rates,
    spacing_stats,
    sweep_flux,
    theoretical_alpha,
    verify_spectral_shift,
)
from edgeflow.hamiltonian import build_hamiltonian, gauge_shift_check
from edgeflow.index import crossing_vs_index, decoupling_compare
from edgeflow.model import GridSpec, PhysicalParams, gap_window, sample_disorder
from edgeflow.spectra import eigen_window
from edgeflow.toymodel import toy_suite

LS = (20.0, 40.0)
SEEDS = (1, 2, 3)
PHI_STEPS = 128
TOL = 0.05


@lru_cache(maxsize=None)
def _setup(L):
    p = PhysicalParams(L=L)
    g = GridSpec.default(p)
    return p, g, theoretical_alpha(p, g)["alpha"]


@lru_cache(maxsize=None)
def _run(L, seed):
    p, g, _ = _setup(L)
    dis = None if seed is None else sample_disorder(seed, g, p.w)
    t = time.perf_counter()
    bs = sweep_flux(p, g, dis, PHI_STEPS)
    return bs, time.perf_counter() - t, dis


def _disordered():
    for L in LS:
        for s in SEEDS:
            yield L, s, _run(L, s)[0]


def test_criterion_1_toy_model(acceptance):
    t = time.perf_counter()
    res = toy_suite()
    dt = time.perf_counter() - t
    ok = (res["ok"] and res["spectrum_error"] <= 1e-12 and res["sigma_error"] <= 1e-12
          and res["winding"] == [1] * 5 and dt < 1.0)
    acceptance(1, ok, f"spectrum err {res['spectrum_error']:.1e}, s err {res['s_error']:.1e}, "
                      f"Q {res['winding']}, sigma err {res['sigma_error']:.1e}, {dt:.2f} s")
    assert ok


def test_criterion_2_clean_edge_branches(acceptance, tmp_path):
    cfg = load_config({"params": {"B": 1.0, "u": 1.0, "gamma": 2.0}}, "branches")
    t = time.perf_counter()
    rep, _ = run_branches(cfg, str(tmp_path))
    dt = time.perf_counter() - t
    ok = rep["asymptote_error"] <= 1e-3 and rep["monotonicity_violations"] == 0 and dt < 10
    acceptance(2, ok, f"|eps_0(k_min) - B/2| = {rep['asymptote_error']:.2e}, "
                      f"violations {rep['monotonicity_violations']}, {dt:.1f} s")
    assert ok


def test_criterion_3_flow_positivity(acceptance):
    rows, ok = [], True
    for L, s, bs in _disordered():
        _, _, alpha = _setup(L)
        dt = _run(L, s)[1]
        lo = float(flow_rates(bs).min())
        good = lo > 0 and (alpha is None or lo >= alpha * (1 - TOL)) and dt <= 600
        good = good and not bs.breaks
        ok &= good
        rows.append(f"L={L:g} seed {s}: min {lo:.4f} vs alpha {alpha:.4f} ({dt:.0f} s)")
    acceptance(3, ok, "; ".join(rows))
    assert ok


def test_criterion_4_velocity_bound(acceptance):
    bound = math.sqrt(3.0) * (1 + TOL)
    top = max(float(flow_rates(bs).max()) for _, _, bs in _disordered())
    ok = top <= bound
    acceptance(4, ok, f"max L dE/dphi {top:.4f} <= {bound:.4f}")
    assert ok


def test_criterion_5_shift_and_spacing(acceptance):
    worst, ok, spac = 0.0, True, []
    for L, s, bs in _disordered():
        _, _, alpha = _setup(L)
        r = verify_spectral_shift(bs)["residual"]
        worst = max(worst, r)
        st = spacing_stats(bs, bs.delta, L, alpha, 1.0, rtol=TOL)
        ok &= r <= 1e-7 and (alpha is None or st.in_bounds)
        spac.append(f"L={L:g}/{s}: {np.min(st.spacings):.4f}-{np.max(st.spacings):.4f} "
                    f"in [{st.lower:.4f}, {st.upper:.4f}]")
    acceptance(5, ok, f"shift residual {worst:.1e}; " + "; ".join(spac))
    assert ok


def test_criterion_6_winding_and_index(acceptance):
    ok, counts = True, []
    for L, s, bs in _disordered():
        p, g, _ = _setup(L)
        H0 = build_hamiltonian(p, g, _run(L, s)[2], 0.0)
        for e in admissible_fermi_levels(bs, 5):
            r = crossing_vs_index(bs, H0, float(e))
            good = r["Q_branches"] == r["trace_Pc"] == r["index"] == 1
            ok &= good and crossing_count(bs, float(e)) == 1
            counts.append(r["index"])
    ident = random_identity_trials(100, 24, 0)
    ok &= ident["failures"] == 0
    acceptance(6, ok, f"{len(counts)} Fermi levels, Q = Tr Pc = Ind = 1 at "
                      f"{sum(c == 1 for c in counts)}; identity failures "
                      f"{ident['failures']}/{ident['trials']}")
    assert ok


def test_criterion_7_conductance(acceptance):
    target = 1 / (2 * math.pi)
    err = {(L, s): abs(edge_conductance(_run(L, s)[0]) - target)
           for L in LS for s in (None,) + SEEDS}
    bound_ok = all(e <= 2 / L for (L, _), e in err.items())
    ratios = {s: err[(40.0, s)] / err[(20.0, s)] for s in (None,) + SEEDS}
    trend_ok = all(r <= 0.7 for r in ratios.values())
    ok = bound_ok and trend_ok
    acceptance(7, ok, f"max |sigma_e - 1/2pi| L=20 {max(err[(20.0, s)] for s in (None,) + SEEDS):.2e}, "
                      f"L=40 {max(err[(40.0, s)] for s in (None,) + SEEDS):.2e} "
                      f"(bound {'ok' if bound_ok else 'FAIL'}); "
                      f"err40/err20 " + ", ".join(f"{'clean' if s is None else s}: {r:.2f}"
                                                  for s, r in ratios.items())
                      + f" (trend <= 0.7 {'ok' if trend_ok else 'FAIL'})")
    assert bound_ok, err
    assert trend_ok, ratios


def test_criterion_8_decoupling(acceptance):
    p = PhysicalParams(L=20.0, u=1.0, w=0.05)
    g = GridSpec.default(p)
    lB = p.magnetic_length
    t = decoupling_compare(p, g, sample_disorder(7, g, p.w), [d * lB for d in (2, 4, 6, 8)])
    proj = all(r.projector_deviation < 1 for r in t.rows if r.D >= 4 * lB - 1e-12)
    ok = t.monotone and t.slope < 0 and proj
    acceptance(8, ok, "max dE " + ", ".join(f"D={r.D:g}: {r.max_shift:.1e}" for r in t.rows)
                      + f"; slope {t.slope:.2f}; |dP| at D=4 {t.rows[1].projector_deviation:.1e}")
    assert ok


def _fh_defect(bs):
    worst = 0.0
    for b in bs.branches:
        if b.energies.size >= 3:
            fd = (b.energies[2:] - b.energies[:-2]) / (2 * bs.dphi)
            worst = max(worst, float(np.abs(fd - b.currents[1:-1]).max()))
    return worst


def test_criterion_9_property_suites(acceptance, monkeypatch, tmp_path):
    fh = max(_fh_defect(_run(L, s)[0]) for L in LS for s in (None,) + SEEDS)

    p, g, _ = _setup(20.0)
    dis = sample_disorder(1, g, p.w)
    H = build_hamiltonian(p, g, dis, 0.7)
    herm = H.hermiticity_defect()
    gauge = gauge_shift_check(build_hamiltonian(p, g, dis, 0.7 + 2 * math.pi), H, p.L)

    sp = PhysicalParams(L=6.0, u=1.0)
    sg = GridSpec(-4.0, 1.75, 0.25, 16)
    Hs = build_hamiltonian(sp, sg, sample_disorder(2, sg, 0.02), 0.3)
    assert Hs.n <= 400
    gap, _ = gap_window(sp)
    ref = np.linalg.eigvalsh(Hs.toarray())
    monkeypatch.setattr(spectra, "DENSE_LIMIT", 10)
    got = eigen_window(Hs, gap).values
    eig_err = float(np.abs(got - ref[gap.contains(ref)]).max())
    monkeypatch.undo()

    raw = ('{"params": {"L": 8.0, "u": 0.2}, "grid": {"x_min": -8.0, "x_max": 4.0, '
           '"hx": 0.25, "ny": 32}, "phi_steps": 64}')
    cfg = tmp_path / "cfg.json"
    cfg.write_text(raw)
    outs = [tmp_path / "a", tmp_path / "b"]
    for o in outs:
        assert main(["conductance", "--config", str(cfg), "--seed", "5", "--out", str(o)]) == 0
    same = all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
               for f in ("branches.csv", "report.json", "config.json"))

    ok = fh <= 1e-5 and herm <= 1e-12 and gauge <= 1e-12 and eig_err <= 1e-9 and same
    acceptance(9, ok, f"FH-FD {fh:.1e}, hermiticity {herm:.1e}, gauge {gauge:.1e}, "
                      f"sparse vs dense {eig_err:.1e}, artifacts identical {same}")
    assert ok
