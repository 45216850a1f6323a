"""Physical constants, confining wall, disorder field and energy windows.

Units are e = hbar = mass = 1.  With the default B = 1 the magnetic length
1/sqrt(B) is one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np


class ParameterError(ValueError):
    """Raised when parameters leave the strong-field regime or are malformed."""


@dataclass(frozen=True)
class PhysicalParams:
    B: float = 1.0
    w: float = 0.02
    L: float = 20.0
    gamma: float = 2.0
    u: float = 0.05
    epsilon: float = 0.05
    delta: float = 0.05

    def __post_init__(self):
        errors = self.problems()
        if errors:
            raise ParameterError("; ".join(errors))

    def problems(self) -> list[str]:
        B, w = self.B, self.w
        out = []
        if not B > 0:
            out.append(f"B: must be positive, got {B}")
        if w < 0:
            out.append(f"w: must be non-negative, got {w}")
        if not B > 2 * w:
            out.append(f"w: need B > 2w, got B={B}, w={w}")
            return out
        if not 0 < self.epsilon < B / 2 - w:
            out.append(f"epsilon: need 0 < epsilon < B/2 - w = {B / 2 - w}, got {self.epsilon}")
        elif not 0 < self.delta < B / 2 - w - self.epsilon:
            out.append(
                f"delta: need 0 < delta < B/2 - w - epsilon = {B / 2 - w - self.epsilon}, "
                f"got {self.delta}"
            )
        if self.gamma < 2:
            out.append(f"gamma: need gamma >= 2, got {self.gamma}")
        if not self.u > 0:
            out.append(f"u: must be positive, got {self.u}")
        if not self.L > 0:
            out.append(f"L: must be positive, got {self.L}")
        return out

    @property
    def magnetic_length(self) -> float:
        return 1.0 / math.sqrt(self.B)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EnergyWindow:
    """Open energy interval ]lo, hi[."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ParameterError(f"empty window ]{self.lo}, {self.hi}[")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def center(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, e):
        e = np.asarray(e)
        return (e > self.lo) & (e < self.hi)

    def widened(self, margin: float) -> "EnergyWindow":
        return EnergyWindow(self.lo - margin, self.hi + margin)

    def intersect(self, other: "EnergyWindow") -> "EnergyWindow":
        return EnergyWindow(max(self.lo, other.lo), min(self.hi, other.hi))

    def is_inside(self, other: "EnergyWindow") -> bool:
        return other.lo <= self.lo and self.hi <= other.hi


@dataclass(frozen=True)
class GridSpec:
    """Finite-difference grid on [x_min, x_max] x [-L/2, L/2[.

    Dirichlet walls sit at x_min and x_max, which are not grid points; the
    interior points are ``x_min + (i + 1) * hx`` for ``i < nx``.  The y
    direction is periodic with ``ny`` sites.
    """

    x_min: float
    x_max: float
    hx: float
    ny: int

    def __post_init__(self):
        if not self.x_min < 0 < self.x_max:
            raise ParameterError(f"grid: need x_min < 0 < x_max, got [{self.x_min}, {self.x_max}]")
        if not self.hx > 0:
            raise ParameterError(f"grid: hx must be positive, got {self.hx}")
        if self.ny < 8:
            raise ParameterError(f"grid: ny must be >= 8, got {self.ny}")
        if self.nx < 2:
            raise ParameterError("grid: fewer than two interior x points")

    @property
    def nx(self) -> int:
        return int(round((self.x_max - self.x_min) / self.hx)) - 1

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.hx * np.arange(1, self.nx + 1)

    def hy(self, L: float) -> float:
        return L / self.ny

    def y(self, L: float) -> np.ndarray:
        return -L / 2 + self.hy(L) * np.arange(self.ny)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    def check_resolution(self, params: PhysicalParams, strict: bool = True) -> list[str]:
        """Grid steps must resolve the magnetic length (>= 4 points per length)."""
        limit = 1.0 / (4.0 * math.sqrt(params.B)) * (1 + 1e-12)
        out = []
        if self.hx > limit:
            out.append(f"grid: hx={self.hx} exceeds 1/(4 sqrt B)={limit:.6g}")
        if self.hy(params.L) > limit:
            out.append(f"grid: hy={self.hy(params.L)} exceeds 1/(4 sqrt B)={limit:.6g}")
        if out and strict:
            raise ParameterError("; ".join(out))
        return out

    @classmethod
    def default(cls, params: PhysicalParams, x_min: float | None = None,
                x_max: float | None = None) -> "GridSpec":
        h = 1.0 / (4.0 * math.sqrt(params.B))
        if x_min is None:
            x_min = -12.0 / math.sqrt(params.B)
        if x_max is None:
            # W(x_max) >= 3B: classically forbidden for every energy of interest
            x_max = (3.0 * params.B / params.u) ** (1.0 / params.gamma)
        n_left = math.ceil(-x_min / h - 1e-9)
        n_right = math.ceil(x_max / h - 1e-9)
        ny = max(8, math.ceil(params.L / h - 1e-9))
        return cls(x_min=-n_left * h, x_max=n_right * h, hx=h, ny=ny)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class DisorderField:
    """Per-site potential on a grid; ``values[i, j]`` lives at (x_i, y_j)."""

    seed: int | None
    w: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def shape(self):
        return self.values.shape


def wall_potential(params: PhysicalParams, x):
    """W(x) = u * x**gamma for x > 0 and zero otherwise."""
    x = np.asarray(x, dtype=float)
    pos = np.maximum(x, 0.0)
    out = params.u * pos ** params.gamma
    return out if out.ndim else float(out)


def sample_disorder(seed: int, grid: GridSpec, w: float) -> DisorderField:
    """I.i.d. uniform potential on [-w, w] at sites with x <= 0, zero elsewhere."""
    if w < 0:
        raise ParameterError(f"w must be non-negative, got {w}")
    rng = np.random.default_rng(seed)
    values = rng.uniform(-w, w, size=grid.shape)
    values[grid.x > 0, :] = 0.0
    return DisorderField(seed=seed, w=w, values=values)


def zero_disorder(grid: GridSpec) -> DisorderField:
    return DisorderField(seed=None, w=0.0, values=np.zeros(grid.shape))


def gap_window(params: PhysicalParams) -> tuple[EnergyWindow, EnergyWindow]:
    """Return the reduced first gap and the window Delta centred at B."""
    bad = params.problems()
    if bad:
        raise ParameterError("; ".join(bad))
    B, w, eps, d = params.B, params.w, params.epsilon, params.delta
    gap = EnergyWindow(B / 2 + w + eps, 3 * B / 2 - w - eps)
    delta = EnergyWindow(B - d, B + d)
    if not (gap.lo < delta.lo and delta.hi < gap.hi):
        raise ParameterError("Delta is not strictly inside the reduced gap")
    return gap, delta
