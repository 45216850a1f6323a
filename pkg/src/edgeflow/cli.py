"""Command-line front end.

Every subcommand writes its artifacts plus ``config.json`` (the fully
resolved configuration) into the output directory.  The exit status is 0
when all asserted invariants hold, 1 when one fails, 2 for an invalid
configuration and 3 when a solver or the branch tracker gives up.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import flow, index, toymodel
from .hamiltonian import build_hamiltonian
from .model import (
    EnergyWindow,
    GridSpec,
    ParameterError,
    PhysicalParams,
    gap_window,
    sample_disorder,
)
from .spectra import EigenSolverError, NoBranchInWindow, edge_branches, eigen_window

SUBCOMMANDS = ("branches", "sweep", "spacing", "conductance", "index", "decouple", "toy")

DEFAULT_OPTIONS = {
    "branches": {"k_min": -8.0, "k_max": 6.0, "dk": 0.01, "n_max": 3, "hx": None,
                 "margin": 10.0, "tol": 1e-12},
    "sweep": {"rtol": 0.05, "fermi_levels": 5},
    "spacing": {"rtol": 0.05},
    "conductance": {"C": 2.0},
    "index": {"fermi_levels": 5, "trials": 100, "dim": 24, "index_seed": 0},
    "decouple": {"D": [2.0, 4.0, 6.0, 8.0], "phi": 0.0},
    "toy": {"L": 200.0, "vbar": 0.1, "delta": [0.9, 1.1]},
}


@dataclass
class RunConfig:
    params: PhysicalParams
    grid: GridSpec
    seed: int | None = None
    phi_steps: int = 128
    threads: int = 1
    options: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "params": asdict(self.params),
            "grid": asdict(self.grid),
            "seed": self.seed,
            "phi_steps": self.phi_steps,
            "threads": self.threads,
            "options": self.options,
        }


_KNOWN_KEYS = {"params", "grid", "seed", "phi_steps", "threads", "options"}


def load_config(raw: dict, subcommand: str) -> RunConfig:
    """Validate a config mapping; every problem is reported with its field."""
    errors = []
    unknown = set(raw) - _KNOWN_KEYS
    if unknown:
        errors.append(f"config: unknown keys {sorted(unknown)}")
    pr = dict(raw.get("params") or {})
    bad = set(pr) - set(PhysicalParams.__dataclass_fields__)
    if bad:
        errors.append(f"params: unknown fields {sorted(bad)}")
    params = None
    try:
        params = PhysicalParams(**{k: float(v) for k, v in pr.items() if k not in bad})
    except ParameterError as exc:
        errors.extend(f"params.{m}" for m in str(exc).split("; "))
    except (TypeError, ValueError) as exc:
        errors.append(f"params: {exc}")
    grid = None
    if params is not None:
        gr = raw.get("grid")
        try:
            grid = GridSpec.default(params) if gr is None else GridSpec(
                x_min=float(gr["x_min"]), x_max=float(gr["x_max"]), hx=float(gr["hx"]),
                ny=int(gr["ny"]))
            for m in grid.check_resolution(params, strict=False):
                errors.append(m)
        except ParameterError as exc:
            errors.extend(str(exc).split("; "))
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"grid: needs x_min, x_max, hx, ny ({exc})")
    seed = raw.get("seed")
    if seed is not None and (not isinstance(seed, int) or seed < 0 or seed >= 2**64):
        errors.append(f"seed: must be an unsigned 64-bit integer or null, got {seed!r}")
    phi_steps = raw.get("phi_steps", 128)
    if not isinstance(phi_steps, int) or phi_steps < 64:
        errors.append(f"phi_steps: must be an integer >= 64, got {phi_steps!r}")
    threads = raw.get("threads", 1)
    if not isinstance(threads, int) or threads < 1:
        errors.append(f"threads: must be a positive integer, got {threads!r}")
    opts = dict(DEFAULT_OPTIONS[subcommand])
    given = raw.get("options") or {}
    bad = set(given) - set(opts)
    if bad:
        errors.append(f"options: unknown for {subcommand}: {sorted(bad)}")
    opts.update({k: v for k, v in given.items() if k in opts})
    if errors:
        raise ParameterError("\n".join(errors))
    return RunConfig(params, grid, seed, phi_steps, threads, opts)


def _write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(flow._jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _disorder(cfg: RunConfig):
    if cfg.seed is None:
        return None
    return sample_disorder(cfg.seed, cfg.grid, cfg.params.w)


def _sweep(cfg: RunConfig):
    bs = flow.sweep_flux(cfg.params, cfg.grid, _disorder(cfg), cfg.phi_steps,
                         workers=cfg.threads)
    try:
        alpha = flow.theoretical_alpha(cfg.params, cfg.grid)
    except NoBranchInWindow:
        alpha = {"alpha": None, "v_F": None}
    return bs, alpha


def run_branches(cfg: RunConfig, out: str) -> tuple[dict, bool]:
    o = cfg.options
    B = cfg.params.B
    lB = cfg.params.magnetic_length
    k = np.arange(o["k_min"], o["k_max"] + o["dk"] / 2, o["dk"])
    # the 1D table is cheap: resolve it finer than the cylinder and keep the
    # artificial walls `margin` magnetic lengths away from every guiding centre
    hx = o["hx"] if o["hx"] is not None else lB / 8
    x_lo = min(cfg.grid.x_min, o["k_min"] / B - o["margin"] * lB)
    x_hi = max(cfg.grid.x_max, o["k_max"] / B + o["margin"] * lB)
    x = GridSpec(math.floor(x_lo / hx) * hx, math.ceil(x_hi / hx) * hx, hx, 8).x
    table = edge_branches(cfg.params, x, k, int(o["n_max"]))
    table.write_csv(os.path.join(out, "branches_table.csv"))
    report = {
        "x_grid": {"x_min": float(x[0] - hx), "x_max": float(x[-1] + hx), "hx": hx},
        "monotonicity_violations": table.monotonicity_violations(o["tol"]),
        "eps0_at_k_min": float(table.eps[0, 0]),
        "asymptote_error": abs(float(table.eps[0, 0]) - B / 2),
    }
    ok = report["monotonicity_violations"] == 0 and report["asymptote_error"] <= 1e-3
    return report, ok


def _flow_checks(cfg, bs, alpha, rtol):
    B, L = cfg.params.B, cfg.params.L
    rep = flow.flow_report(bs, alpha["alpha"], B, cfg.options.get("fermi_levels", 5), rtol)
    checks = {
        "flow_bound": rep.flow_bound_ok,
        "velocity_bound": rep.velocity_bound_ok,
        "spectral_shift": rep.shift_residual <= 1e-7 * B,
        "gauge_multiset": rep.gauge_residual <= 1e-7 * B,
        "winding_one": all(q == 1 for q in rep.crossing_counts.values()),
        "spacing_bounds": rep.spacing_bounds_ok,
        "conductance": abs(rep.sigma_e - 1 / (2 * math.pi)) <= 2.0 / L,
    }
    return rep, checks


def run_sweep(cfg: RunConfig, out: str):
    bs, alpha = _sweep(cfg)
    rep, checks = _flow_checks(cfg, bs, alpha, cfg.options["rtol"])
    bs.write_csv(os.path.join(out, "branches.csv"))
    st = flow.spacing_stats(bs, bs.delta, bs.L, alpha["alpha"], cfg.params.B,
                            rtol=cfg.options["rtol"])
    st.write_csv(os.path.join(out, "spacings.csv"), os.path.join(out, "histogram.csv"))
    report = dict(rep.__dict__)
    report["v_F"] = alpha["v_F"]
    report["checks"] = checks
    return report, all(checks.values())


def run_spacing(cfg: RunConfig, out: str):
    p, g = cfg.params, cfg.grid
    _, delta = gap_window(p)
    H = build_hamiltonian(p, g, _disorder(cfg), 0.0)
    pairs = eigen_window(H, flow.tracking_window(p))
    xs = H.x_of_sites()
    right = np.sum(np.abs(pairs.vectors[xs > 0.5 * g.x_min, :]) ** 2, axis=0) > 0.5
    try:
        alpha = flow.theoretical_alpha(p, g)["alpha"]
    except NoBranchInWindow:
        alpha = None
    st = flow.spacing_stats(pairs.values[right], delta, p.L, alpha, p.B,
                            rtol=cfg.options["rtol"])
    st.write_csv(os.path.join(out, "spacings.csv"), os.path.join(out, "histogram.csv"))
    report = {"levels": st.levels, "spacings": st.spacings, "s": st.s,
              "histogram": st.hist, "lower": st.lower, "upper": st.upper,
              "in_bounds": st.in_bounds, "alpha": alpha}
    return report, st.in_bounds


def run_conductance(cfg: RunConfig, out: str):
    bs, _ = _sweep(cfg)
    bs.write_csv(os.path.join(out, "branches.csv"))
    sigma = flow.edge_conductance(bs)
    err = abs(sigma - 1 / (2 * math.pi))
    bound = cfg.options["C"] / cfg.params.L
    report = {"sigma_e": sigma, "target": 1 / (2 * math.pi), "error": err, "bound": bound}
    return report, err <= bound


def run_index(cfg: RunConfig, out: str):
    o = cfg.options
    bs, _ = _sweep(cfg)
    H0 = build_hamiltonian(cfg.params, cfg.grid, _disorder(cfg), 0.0)
    rows = [index.crossing_vs_index(bs, H0, float(e))
            for e in flow.admissible_fermi_levels(bs, int(o["fermi_levels"]))]
    ident = random_identity_trials(int(o["trials"]), int(o["dim"]), int(o["index_seed"]))
    report = {"crossing_vs_index": rows, "identities": ident}
    ok = all(r["equal"] and r["index"] == 1 for r in rows) and ident["failures"] == 0
    return report, ok


def random_identity_trials(trials: int, dim: int, seed: int) -> dict:
    """Index identities on random spectral projections of random Hermitian matrices."""
    rng = np.random.default_rng(seed)
    fails = 0
    for _ in range(trials):
        projs = []
        for _ in range(3):
            A = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
            H = 0.5 * (A + A.conj().T)
            w = np.linalg.eigvalsh(H)
            r = int(rng.integers(0, dim + 1))
            e = w[0] - 1 if r == 0 else (w[-1] + 1 if r == dim else 0.5 * (w[r - 1] + w[r]))
            projs.append(index.spectral_projection(H, float(e)))
        Z = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        U, _ = np.linalg.qr(Z)
        if not index.index_identities_check(*projs, U)["ok"]:
            fails += 1
    return {"trials": trials, "dim": dim, "seed": seed, "failures": fails}


def run_decouple(cfg: RunConfig, out: str):
    o = cfg.options
    lB = cfg.params.magnetic_length
    seed = 0 if cfg.seed is None else cfg.seed
    dis = sample_disorder(seed, cfg.grid, cfg.params.w)
    table = index.decoupling_compare(cfg.params, cfg.grid, dis, [d * lB for d in o["D"]],
                                     float(o["phi"]))
    table.write_csv(os.path.join(out, "deviation.csv"))
    report = table.to_dict()
    proj_ok = all(r.projector_deviation < 1 for r in table.rows if r.D >= 4 * lB - 1e-12)
    report["checks"] = {"monotone": table.monotone, "slope_negative": table.slope < 0,
                        "projector_below_one": proj_ok}
    return report, all(report["checks"].values())


def run_toy(cfg: RunConfig, out: str):
    o = cfg.options
    delta = EnergyWindow(*o["delta"])
    res = toymodel.toy_suite(float(o["L"]), float(o["vbar"]), delta, cfg.phi_steps)
    m_lo, m_hi = res["parameters"]["m_range"]
    bs = toymodel.toy_branchset(m_lo, m_hi, float(o["L"]), float(o["vbar"]), delta, cfg.phi_steps)
    bs.write_csv(os.path.join(out, "branches.csv"))
    st = flow.spacing_stats(bs, delta, bs.L)
    st.write_csv(os.path.join(out, "spacings.csv"), os.path.join(out, "histogram.csv"))
    return res, res["ok"]


RUNNERS = {
    "branches": run_branches,
    "sweep": run_sweep,
    "spacing": run_spacing,
    "conductance": run_conductance,
    "index": run_index,
    "decouple": run_decouple,
    "toy": run_toy,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="edgeflow", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--out", default="out", help="output directory (default: out)")
    ap.add_argument("--seed", type=int, help="disorder seed (omit for the clean system)")
    ap.add_argument("--phi-steps", type=int, help="flux grid steps (>= 64)")
    ap.add_argument("--threads", type=int, help="worker processes for the flux sweep")
    return ap


def run(subcommand: str, raw: dict, out: str) -> int:
    try:
        cfg = load_config(raw, subcommand)
    except ParameterError as exc:
        print(f"invalid configuration:\n{exc}", file=sys.stderr)
        return 2
    os.makedirs(out, exist_ok=True)
    _write_json(cfg.to_dict(), os.path.join(out, "config.json"))
    try:
        report, ok = RUNNERS[subcommand](cfg, out)
    except (EigenSolverError, flow.TrackingError, NoBranchInWindow, flow.TooFewLevels,
            flow.FermiLevelError, index.ProjectionError) as exc:
        print(f"{subcommand} failed: {exc}", file=sys.stderr)
        return 3
    report = dict(report)
    report["ok"] = bool(ok)
    _write_json(report, os.path.join(out, "report.json"))
    print(f"{subcommand}: {'ok' if ok else 'FAILED'} ({out})")
    return 0 if ok else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    raw = {}
    if args.config:
        with open(args.config) as fh:
            raw = json.load(fh)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.phi_steps is not None:
        raw["phi_steps"] = args.phi_steps
    if args.threads is not None:
        raw["threads"] = args.threads
    return run(args.subcommand, raw, args.out)


if __name__ == "__main__":
    sys.exit(main())
