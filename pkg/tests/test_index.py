import math

import mpmath
import numpy as np
import pytest

from edgeflow.hamiltonian import build_edge_1d, build_hamiltonian
from edgeflow.index import (
    NonIntegerIndex,
    Projection,
    ProjectionError,
    crossing_vs_index,
    decoupling_compare,
    index_identities_check,
    relative_index,
    spectral_projection,
)
from edgeflow.model import (
    DisorderField,
    EnergyWindow,
    GridSpec,
    PhysicalParams,
    gap_window,
    sample_disorder,
)
from edgeflow.spectra import eigen_window
from edgeflow.toymodel import toy_branchset, toy_hamiltonian


def _random_hermitian(rng, n):
    A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return 0.5 * (A + A.conj().T)


def test_projection_of_diagonal():
    P = spectral_projection(np.diag([0.0, 1.0, 2.0]), 0.5)
    assert np.allclose(P.dense, np.diag([1, 0, 0]))
    assert P.rank() == 1


def test_projection_below_spectrum_is_zero():
    P = spectral_projection(np.diag([0.0, 1.0, 2.0]), -1.0)
    assert P.rank() == 0
    assert np.all(P.dense == 0)


def test_projection_on_eigenvalue_raises():
    with pytest.raises(ProjectionError):
        spectral_projection(np.diag([0.0, 1.0, 2.0]), 1.0)


def test_random_projection_at_median(rng):
    H = _random_hermitian(rng, 50)
    w = np.linalg.eigvalsh(H)
    P = spectral_projection(H, 0.5 * (w[24] + w[25]))
    assert P.rank() == 25
    assert P.defects()["idempotency"] <= 1e-12
    assert P.is_valid()


def test_sparse_projection_matches_dense(small_params, small_grid):
    H = build_hamiltonian(small_params, small_grid, None, 0.4)
    E_F = 1.02
    Ps = spectral_projection(H, E_F, dense=False)
    Pd = spectral_projection(H, E_F, dense=True)
    assert Ps.basis is not None
    assert Ps.rank() == Pd.rank()
    assert np.abs(Ps.dense - Pd.dense).max() <= 1e-9


def test_relative_index_of_nested_projections():
    e = np.eye(8)
    P3 = Projection.from_basis(e[:, :3])
    P5 = Projection.from_basis(e[:, :5])
    assert relative_index(P3, P5) == -2
    assert relative_index(P5, P3) == 2
    assert relative_index(P3, P5, power=3) == -2


def test_relative_index_zero_for_unitary_equivalent(rng):
    H = _random_hermitian(rng, 12)
    P = spectral_projection(H, 0.0)
    U, _ = np.linalg.qr(rng.normal(size=(12, 12)) + 1j * rng.normal(size=(12, 12)))
    Q = P.conjugated(U)
    # equal rank, so the difference is trace zero even though P != Q
    assert relative_index(P, Q) == 0


def test_relative_index_rejects_non_projection_traces():
    P = Projection(matrix=np.diag([0.5, 0.0]))
    with pytest.raises(NonIntegerIndex):
        relative_index(P, Projection(matrix=np.zeros((2, 2))))


def test_index_identities_random(rng):
    for _ in range(10):
        ps = []
        for _ in range(3):
            H = _random_hermitian(rng, 16)
            w = np.linalg.eigvalsh(H)
            r = int(rng.integers(1, 16))
            ps.append(spectral_projection(H, 0.5 * (w[r - 1] + w[r])))
        U, _ = np.linalg.qr(rng.normal(size=(16, 16)) + 1j * rng.normal(size=(16, 16)))
        res = index_identities_check(*ps, U)
        assert res["ok"], res


def _toy():
    L, vbar = 30.0, 0.0
    delta = EnergyWindow(0.9, 1.1)
    m_lo, m_hi = 0, 12
    bs = toy_branchset(m_lo, m_hi, L, vbar, delta, 64)
    H0 = toy_hamiltonian(m_lo, m_hi, L, vbar, 0.0)
    return bs, H0


def test_crossing_vs_index_toy():
    bs, H0 = _toy()
    r = crossing_vs_index(bs, H0, 1.0)
    assert r["Q_branches"] == r["trace_Pc"] == r["index"] == 1
    assert r["equal"]


def test_crossing_vs_index_below_all_levels():
    bs, H0 = _toy()
    r = crossing_vs_index(bs, H0, -1.0)
    assert r["Q_branches"] == r["trace_Pc"] == r["index"] == 0


# decoupling

DEC_PARAMS = PhysicalParams(L=20.0, u=1.0, w=0.05)


def test_decoupling_clean_is_zero():
    g = GridSpec.default(DEC_PARAMS)
    zero = sample_disorder(1, g, 0.0)
    t = decoupling_compare(DEC_PARAMS, g, zero, [2.0, 4.0])
    assert all(r.max_shift <= 1e-12 for r in t.rows)
    assert all(r.levels > 0 for r in t.rows)


def test_decoupling_decreases_with_distance():
    g = GridSpec.default(DEC_PARAMS)
    t = decoupling_compare(DEC_PARAMS, g, sample_disorder(7, g, DEC_PARAMS.w), [2.0, 4.0, 6.0])
    assert t.monotone
    assert t.slope < 0
    assert t.rows[1].projector_deviation < 1


def test_decoupling_rejects_unsorted_distances():
    g = GridSpec.default(DEC_PARAMS)
    with pytest.raises(ValueError):
        decoupling_compare(DEC_PARAMS, g, sample_disorder(7, g, DEC_PARAMS.w), [4.0, 2.0])


def _sturm_eigenvalue(diag, off, guess, width=1e-6):
    """Eigenvalue of a constant-coupling tridiagonal matrix by 60-digit bisection."""
    d = [mpmath.mpf(float(a)) for a in diag]
    o2 = mpmath.mpf(float(off)) ** 2

    def below(lam):
        q = d[0] - lam
        c = int(q < 0)
        for di in d[1:]:
            q = di - lam - o2 / q
            c += int(q < 0)
        return c

    lo = mpmath.mpf(guess) - mpmath.mpf(width)
    hi = mpmath.mpf(guess) + mpmath.mpf(width)
    n = below(lo)
    assert below(hi) == n + 1
    for _ in range(190):
        mid = (lo + hi) / 2
        if below(mid) > n:
            hi = mid
        else:
            lo = mid
    return (lo + hi) / 2


def test_shift_identity_against_high_precision_oracle():
    """With y-independent disorder the cylinder separates, so each level
    shift is a 1D problem that can be solved to 60 digits."""
    p = DEC_PARAMS
    g = GridSpec.default(p)
    x, y, hy = g.x, g.y(p.L), g.hy(p.L)
    v = np.random.default_rng(3).uniform(-p.w, p.w, g.nx)
    v[x > 0] = 0
    gap, _ = gap_window(p)
    xs = np.tile(x, g.ny)
    phi = 0.3
    for D in (2.0, 6.0):
        vD = np.where(x > -D + 1e-9 * g.hx, 0.0, v)
        field = DisorderField(None, p.w, np.repeat(vD[:, None], g.ny, axis=1))
        pairs = eigen_window(build_hamiltonian(p, g, field, phi), gap)
        right = np.sum(np.abs(pairs.vectors[xs > g.x_min / 2]) ** 2, axis=0) > 0.5
        E, V = pairs.values[right], pairs.vectors[:, right]
        vflat = field.values.ravel(order="F")
        for m in (0, 2):
            k = (2 * math.pi * m + phi) / p.L
            t = build_edge_1d(p, x, k, hy)
            e, ve = t.eigh(1)
            psi = np.outer(np.exp(2j * math.pi * m * y / p.L), ve[:, 0]).ravel() / math.sqrt(g.ny)
            i = int(np.argmin(np.abs(E - e[0])))
            ov = np.vdot(psi, V[:, i])
            shift = (np.vdot(psi, vflat * V[:, i]) / ov).real
            with mpmath.workdps(60):
                exact = float(_sturm_eigenvalue(t.diag + vD, t.off[0], E[i])
                              - _sturm_eigenvalue(t.diag, t.off[0], e[0]))
            assert shift == pytest.approx(exact, rel=1e-3)
