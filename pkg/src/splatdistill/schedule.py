"""Adaptive timestep schedule.

A two-sided Gaussian weight over integer diffusion timesteps is fitted so
that the probability mass inside each phase's timestep range matches that
phase's share of the training budget. Inverting the fitted distribution's
upper tail then gives a non-increasing timestep for every training step.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FitWarning, ParamError

T_MAX = 1000
POOR_FIT = 0.01


@dataclass(frozen=True)
class PhaseTable:
    """Phase boundaries, step budgets and sampling floors.

    Everything is indexed by timestep range, lowest range first:
    ``budgets[k]`` and ``lower_bounds[k]`` belong to
    ``[boundaries[k], boundaries[k + 1])`` (the last range is closed).
    Training visits the ranges from the highest one down.
    """

    boundaries: tuple = (20, 350, 450, 800)
    budgets: tuple = (900, 500, 1000)
    lower_bounds: tuple = (20, 150, 400)
    warmup_steps: int = 500
    warmup_floor: int = 500

    def __post_init__(self):
        b = tuple(int(x) for x in self.boundaries)
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "budgets", tuple(int(x) for x in self.budgets))
        object.__setattr__(self, "lower_bounds", tuple(int(x) for x in self.lower_bounds))
        if len(b) < 2:
            raise ParamError("need at least two phase boundaries")
        if any(b0 >= b1 for b0, b1 in zip(b, b[1:])):
            raise ParamError(f"phase boundaries must increase strictly: {b}")
        if b[0] < 1 or b[-1] > T_MAX:
            raise ParamError(f"phase boundaries must lie in [1, {T_MAX}]")
        k = len(b) - 1
        if len(self.budgets) != k or len(self.lower_bounds) != k:
            raise ParamError(f"{k} ranges need {k} budgets and {k} lower bounds")
        if any(n < 1 for n in self.budgets):
            raise ParamError("step budgets must be positive")
        if any(lb > t or lb < 1 for lb, t in zip(self.lower_bounds, b)):
            raise ParamError("each lower bound must lie in [1, start of its range]")
        if not 1 <= self.warmup_floor <= b[-1]:
            raise ParamError("warmup floor must lie in [1, max timestep]")

    @property
    def total_steps(self) -> int:
        return sum(self.budgets)

    @property
    def n_phases(self) -> int:
        return len(self.budgets)

    @property
    def t_min(self) -> int:
        return self.boundaries[0]

    @property
    def t_max(self) -> int:
        return self.boundaries[-1]

    def range_masks(self, t: np.ndarray) -> np.ndarray:
        """(K, len(t)) membership of timesteps in each range."""
        b = self.boundaries
        masks = [(t >= b[k]) & (t < b[k + 1]) for k in range(self.n_phases)]
        masks[-1] = (t >= b[-2]) & (t <= b[-1])
        return np.stack(masks)

    def phase_of(self, t: int) -> int:
        """Index of the range containing ``t`` (clamped to the outer ranges)."""
        b = self.boundaries
        for k in range(self.n_phases - 1, -1, -1):
            if t >= b[k]:
                return k
        return 0

    def scaled(self, total_steps: int) -> "PhaseTable":
        """Same proportions for a different run length."""
        ratio = total_steps / self.total_steps
        budgets = [max(1, int(round(n * ratio))) for n in self.budgets]
        budgets[-1] = max(1, total_steps - sum(budgets[:-1]))
        return replace(self, budgets=tuple(budgets), warmup_steps=int(round(self.warmup_steps * ratio)))

    def to_dict(self) -> dict:
        return {
            "boundaries": list(self.boundaries),
            "budgets": list(self.budgets),
            "lower_bounds": list(self.lower_bounds),
            "warmup_steps": self.warmup_steps,
            "warmup_floor": self.warmup_floor,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PhaseTable":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


_TIMESTEPS = np.arange(1, T_MAX + 1, dtype=np.float64)


def dual_gaussian(t, s1: float, s2: float, T: float) -> np.ndarray:
    """Unnormalized two-sided bell: spread ``s1`` for ``t <= T``, ``s2`` above."""
    t = np.asarray(t, dtype=np.float64)
    left = np.exp(-((t - T) ** 2) / (2 * s1 * s1)) / math.sqrt(2 * math.pi * s1 * s1)
    right = np.exp(-((t - T) ** 2) / (2 * s2 * s2)) / math.sqrt(2 * math.pi * s2 * s2)
    return np.where(t <= T, left, right)


@dataclass(frozen=True)
class ScheduleParams:
    s1: float
    s2: float
    T: float
    objective: float = float("nan")
    warning: str | None = None
    Z: float = field(init=False)

    def __post_init__(self):
        if not (self.s1 > 0 and self.s2 > 0):
            raise ParamError(f"spreads must be positive, got s1={self.s1}, s2={self.s2}")
        object.__setattr__(self, "Z", float(np.sum(dual_gaussian(_TIMESTEPS, self.s1, self.s2, self.T))))

    def weights(self) -> np.ndarray:
        """Normalized weight for every timestep 1..1000."""
        return dual_gaussian(_TIMESTEPS, self.s1, self.s2, self.T) / self.Z

    def to_dict(self) -> dict:
        return {"s1": self.s1, "s2": self.s2, "T": self.T, "Z": self.Z,
                "objective": self.objective, "warning": self.warning}


def w_dg(t, params: ScheduleParams):
    """Normalized weight of timestep(s) ``t`` under ``params``."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 1) or np.any(t_arr > T_MAX):
        raise ParamError(f"timestep must lie in [1, {T_MAX}]")
    out = dual_gaussian(t_arr, params.s1, params.s2, params.T) / params.Z
    return float(out) if out.ndim == 0 else out


def phase_masses(params: ScheduleParams, table: PhaseTable) -> np.ndarray:
    w = params.weights()
    return table.range_masks(_TIMESTEPS) @ w


def fit_objective(s1: float, s2: float, T: float, table: PhaseTable) -> float:
    w = dual_gaussian(_TIMESTEPS, s1, s2, T)
    masses = table.range_masks(_TIMESTEPS) @ w / w.sum()
    target = np.asarray(table.budgets, dtype=np.float64) / table.total_steps
    return float(np.sum((masses - target) ** 2))


@dataclass(frozen=True)
class SearchGrid:
    s_min: float = 10.0
    s_max: float = 400.0
    s_step: float = 10.0
    T_step: float = 10.0
    refine_iters: int = 40


def _coarse_grid(table: PhaseTable, grid: SearchGrid):
    s = np.arange(grid.s_min, grid.s_max + 1e-9, grid.s_step)
    Ts = np.arange(table.t_min, table.t_max + 1e-9, grid.T_step)
    t = _TIMESTEPS
    masks = table.range_masks(t).astype(np.float64)  # (K, 1000)
    d2 = (t[None, :] - Ts[:, None]) ** 2  # (nT, 1000)
    left_of = t[None, :] <= Ts[:, None]
    # (ns, nT, 1000) bells for each spread and mode
    bell = np.exp(-d2[None] / (2 * s[:, None, None] ** 2)) / np.sqrt(2 * np.pi * s[:, None, None] ** 2)
    left = bell * left_of[None]
    right = bell * ~left_of[None]
    L_k = left @ masks.T  # (ns, nT, K)
    R_k = right @ masks.T
    L_tot = left.sum(axis=2)
    R_tot = right.sum(axis=2)
    masses = (L_k[:, None] + R_k[None, :]) / (L_tot[:, None] + R_tot[None, :])[..., None]
    target = np.asarray(table.budgets, dtype=np.float64) / table.total_steps
    obj = np.sum((masses - target) ** 2, axis=-1)  # (ns1, ns2, nT)
    i, j, k = np.unravel_index(np.argmin(obj), obj.shape)
    return float(s[i]), float(s[j]), float(Ts[k]), float(obj[i, j, k])


def fit_schedule(table: PhaseTable = PhaseTable(), grid: SearchGrid = SearchGrid()) -> ScheduleParams:
    """Least-squares fit of the weight's spreads and mode to the phase budgets.

    A coarse grid over ``(s1, s2, T)`` is followed by coordinate descent with
    step halving for a fixed number of sweeps, so the result is
    deterministic. Fits with objective above 0.01 carry a warning.
    """
    if grid.s_min <= 0 or grid.s_max < grid.s_min or grid.s_step <= 0 or grid.T_step <= 0:
        raise ParamError("empty or invalid search grid")
    s1, s2, T, best = _coarse_grid(table, grid)
    x = np.array([s1, s2, T])
    lo = np.array([grid.s_min, grid.s_min, table.t_min], dtype=np.float64)
    hi = np.array([grid.s_max, grid.s_max, table.t_max], dtype=np.float64)
    step = np.array([grid.s_step, grid.s_step, grid.T_step]) / 2
    for _ in range(grid.refine_iters):
        improved = False
        for d in range(3):
            for sign in (1.0, -1.0):
                cand = x.copy()
                cand[d] = np.clip(cand[d] + sign * step[d], lo[d], hi[d])
                val = fit_objective(*cand, table)
                if val < best:
                    x, best, improved = cand, val, True
                    break
        if not improved:
            step /= 2
    warning = None
    if best > POOR_FIT:
        warning = f"schedule fit objective {best:.4g} exceeds {POOR_FIT}"
        warnings.warn(warning, FitWarning, stacklevel=2)
    return ScheduleParams(float(x[0]), float(x[1]), float(x[2]), objective=best, warning=warning)


def t_curve(params: ScheduleParams, table: PhaseTable, offset: int = 0, total_steps: int | None = None) -> np.ndarray:
    """Timestep for each training step ``i = 1..N`` (array index ``i - 1``).

    Picks the timestep whose upper-tail mass is closest to ``i / N`` (ties
    resolve to the larger timestep), adds ``offset`` and clamps to the
    outermost phase boundaries. The result never increases with ``i``.
    """
    N = table.total_steps if total_steps is None else int(total_steps)
    w = params.weights()
    tail = np.cumsum(w[::-1])[::-1]  # tail[tau - 1] = sum_{t >= tau} w(t)
    q = np.arange(1, N + 1, dtype=np.float64) / N
    err = np.abs(tail[None, :] - q[:, None])
    # argmin over reversed columns -> largest tau among ties
    tau = T_MAX - np.argmin(err[:, ::-1], axis=1)
    return np.clip(tau + int(offset), table.t_min, table.t_max).astype(np.int64)


def sample_timestep(i: int, curve: np.ndarray, table: PhaseTable, rng: np.random.Generator) -> int:
    """Draw the diffusion timestep for training step ``i`` (1-based).

    During warmup (``i < table.warmup_steps``) the draw is uniform on
    ``[warmup_floor, t_max]``. Afterwards it is uniform between the floor of
    the range containing the curve value and the curve value itself.
    """
    N = len(curve)
    if not 1 <= i <= N:
        raise ParamError(f"training step {i} outside [1, {N}]")
    if i < table.warmup_steps:
        return int(rng.integers(table.warmup_floor, table.t_max + 1))
    t_dg = int(curve[i - 1])
    bound = table.lower_bounds[table.phase_of(t_dg)]
    if t_dg <= bound:
        return bound
    return int(rng.integers(bound, t_dg + 1))


def phase_occupancy(curve: np.ndarray, table: PhaseTable) -> np.ndarray:
    """Number of training steps whose curve value lies in each range."""
    return table.range_masks(np.asarray(curve)).sum(axis=1)
