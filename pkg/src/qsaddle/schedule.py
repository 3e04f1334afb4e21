"""Decrease-and-hold stepsize sequences.

Two reference functions drive the schedules:

    eps_ref(t) = c1 / (1 + c2 * t**alpha)      (mixing / quantization stepsize)
    eta_ref(t) = c1 / (1 + c2 * t**beta)       (gradient stepsize)

Before ``t0`` the stepsizes follow the references. On each hold stage
``[t_i, t_{i+1})`` they are frozen at the reference value of ``t_i``, and
from ``t_I`` on they follow the references again.

The hold boundaries are either derived from problem constants
(:func:`theoretical_schedule`) or given directly (:func:`practical_schedule`).
Theoretical boundaries can be astronomically large, so they are generated
lazily.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class ScheduleParams:
    alpha: float
    beta: float
    c1: float
    c2: float
    p: float = 0.1
    epsilon_target: float = 0.1
    mode: str = "practical"
    practical_t0: int | None = None
    practical_hold: int | None = None
    practical_n_holds: int | None = None
    gamma: float = 1.0

    def __post_init__(self):
        a, b = self.alpha, self.beta
        if not 0.6 < a < 2.0 / 3.0:
            raise ValueError(f"alpha outside (0.6, 2/3): got {a}")
        if not 1.5 * a < b < 1.0:
            raise ValueError(f"beta outside (3/2*alpha, 1) = ({1.5 * a:g}, 1): got {b}")
        if not self.c1 > 0 or not self.c2 > 0:
            raise ValueError(f"c1 and c2 must be positive, got c1={self.c1}, c2={self.c2}")
        if not 0 < self.p < 1:
            raise ValueError(f"p outside (0, 1): got {self.p}")
        if not self.epsilon_target > 0:
            raise ValueError(f"epsilon_target must be positive, got {self.epsilon_target}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.mode not in ("theoretical", "practical"):
            raise ValueError(f"mode must be 'theoretical' or 'practical', got {self.mode!r}")

    def eps_ref(self, t) -> float:
        return self.c1 / (1.0 + self.c2 * float(t) ** self.alpha)

    def eta_ref(self, t) -> float:
        return self.c1 / (1.0 + self.c2 * float(t) ** self.beta)


@dataclass(frozen=True)
class ProblemConstants:
    G: float
    rho: float
    L: float
    sigma2: float
    N: int
    d: int
    ell: float
    f0: float
    f_star: float = 0.0

    def __post_init__(self):
        for name in ("G", "rho", "L", "ell"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 <= self.sigma2 < 1:
            raise ValueError(f"sigma2 outside [0, 1): got {self.sigma2}")
        if self.N < 1 or self.d < 1:
            raise ValueError("N and d must be positive")
        if self.f0 < self.f_star:
            raise ValueError(f"f0 = {self.f0} is below the lower bound f_star = {self.f_star}")


@dataclass(frozen=True)
class TheoreticalConstants:
    d1: float
    d2: float
    C1: float
    C2: float
    C3: float
    Q: float
    t0: int
    I: int


def derive_constants(sp: ScheduleParams, pc: ProblemConstants) -> TheoreticalConstants:
    """Evaluate the theory constants that fix ``t0`` and the number of holds."""
    a, b = sp.alpha, sp.beta
    e1, e3 = 2 * a - b, b - 4 * a / 3
    if e1 <= 0 or e3 <= 0:
        raise ValueError(f"need 2*alpha - beta > 0 and beta - 4*alpha/3 > 0, got {e1:g}, {e3:g}")
    gap = 1.0 - pc.sigma2
    eps0 = sp.c1  # eps_ref(0)
    eps, rho = sp.epsilon_target, pc.rho
    d1 = (1 + gap * eps0) / gap * pc.G**2
    d2 = (1 + gap * eps0) * pc.sigma2**2 * pc.N * pc.d * pc.ell**2
    dd = d1 + d2
    drop = pc.f0 - pc.f_star
    srho = math.sqrt(rho * eps)
    C1 = (4 * sp.c1 ** (2 / 3) * dd / (sp.p * sp.c2 ** (2 / 3) * gap)) ** (3 / (2 * a))
    C2 = (4 * drop * dd ** (2 / 3) * gap ** (2 / 3) * sp.c1
          / (sp.c2 * sp.p * eps**2 * srho)) ** (1 / e1)
    C3 = (12 * rho * dd ** (1 / 6)
          / (gap ** (1 / 6) * math.sqrt(sp.gamma) * (rho * eps) ** 0.25 * pc.ell)) ** (1 / e3)
    Q = math.sqrt(eps**3 / rho) / 60**2
    top = max(C1, C2, C3)
    if not math.isfinite(top):
        raise OverflowError("theoretical t0 overflows double precision; use practical mode")
    t0 = math.ceil(top)
    I_real = 30 * max(drop / Q, 2 * drop * sp.eps_ref(t0) / (eps**2 * sp.eta_ref(t0)))
    return TheoreticalConstants(d1=d1, d2=d2, C1=C1, C2=C2, C3=C3, Q=Q, t0=t0, I=math.ceil(I_real))


def theoretical_hold_length(sp: ScheduleParams, rho: float, t_i: int) -> int:
    """``ceil((1 + c2 * t_i**alpha) / (c1 * sqrt(rho * epsilon)))``."""
    return math.ceil((1 + sp.c2 * float(t_i) ** sp.alpha) / (sp.c1 * math.sqrt(rho * sp.epsilon_target)))


class StepsizeSchedule:
    """Interface shared by every schedule: ``eps(k)`` and ``eta(k)``."""

    def eps(self, k: int) -> float:
        raise NotImplementedError

    def eta(self, k: int) -> float:
        raise NotImplementedError

    def describe(self) -> dict:
        raise NotImplementedError

    def eps_sequence(self, n: int) -> np.ndarray:
        """``[eps(0), ..., eps(n-1)]``."""
        return np.array([self.eps(k) for k in range(n)])

    def eta_sequence(self, n: int) -> np.ndarray:
        return np.array([self.eta(k) for k in range(n)])


class Schedule(StepsizeSchedule):
    """Decrease-and-hold schedule with boundaries ``t0 < t1 < ... < t_I``.

    ``next_start`` maps ``t_i`` to ``t_{i+1}``; boundaries are produced on
    demand, so ``I`` may be far beyond anything materialisable.
    """

    kind = "decrease_hold"

    def __init__(self, params: ScheduleParams, t0: int, I: int,
                 next_start: Callable[[int], int], derived: dict | None = None):
        if t0 < 0 or I < 0:
            raise ValueError("t0 and I must be nonnegative")
        self.params = params
        self.t0 = int(t0)
        self.I = int(I)
        self.derived = dict(derived or {})
        self._next_start = next_start
        self._starts = [self.t0]

    def _extend_to(self, k: int) -> None:
        starts = self._starts
        while len(starts) <= self.I and starts[-1] <= k:
            nxt = int(self._next_start(starts[-1]))
            if nxt <= starts[-1]:
                raise ValueError("hold boundaries must be strictly increasing")
            starts.append(nxt)

    def hold_starts_upto(self, k: int) -> tuple[int, ...]:
        """All boundaries up to and including the first one beyond ``k``."""
        self._extend_to(k)
        return tuple(self._starts)

    @property
    def hold_starts(self) -> tuple[int, ...]:
        if self.I > 1_000_000:
            raise OverflowError(f"I = {self.I} hold stages is too many to materialise")
        self._extend_to(math.inf)
        return tuple(self._starts)

    @property
    def t_last(self) -> int | None:
        """``t_I`` if already generated, else None."""
        return self._starts[-1] if len(self._starts) == self.I + 1 else None

    def stage(self, k: int) -> int | None:
        """Index ``i`` with ``t_i <= k < t_{i+1}``, or None outside the holds."""
        if k < self.t0:
            return None
        self._extend_to(k)
        if len(self._starts) == self.I + 1 and k >= self._starts[-1]:
            return None
        return bisect.bisect_right(self._starts, k) - 1

    def hold_time(self, i: int) -> float:
        """Reference time whose value is held on stage ``i``."""
        return self._starts[i]

    def eps(self, k: int) -> float:
        i = self.stage(k)
        return self.params.eps_ref(k if i is None else self.hold_time(i))

    def eta(self, k: int) -> float:
        i = self.stage(k)
        return self.params.eta_ref(k if i is None else self.hold_time(i))

    def reference_times(self, n: int) -> np.ndarray:
        """Time fed to the reference functions at each ``k < n``: ``k`` itself
        outside the holds, the stage's hold time inside."""
        ks = np.arange(n, dtype=float)
        if n == 0:
            return ks
        starts = np.array(self.hold_starts_upto(n - 1), dtype=float)
        inside = ks >= self.t0
        if len(starts) == self.I + 1:
            inside &= ks < starts[-1]
        n_stages = max(len(starts) - 1, 0)
        if n_stages == 0:
            return ks
        held = np.array([self.hold_time(i) for i in range(n_stages)], dtype=float)
        idx = np.clip(np.searchsorted(starts, ks, side="right") - 1, 0, n_stages - 1)
        return np.where(inside, held[idx], ks)

    def eps_sequence(self, n: int) -> np.ndarray:
        p = self.params
        return p.c1 / (1.0 + p.c2 * self.reference_times(n) ** p.alpha)

    def eta_sequence(self, n: int) -> np.ndarray:
        p = self.params
        return p.c1 / (1.0 + p.c2 * self.reference_times(n) ** p.beta)

    def describe(self) -> dict:
        out = {"kind": self.kind, "params": asdict(self.params), "t0": self.t0, "I": self.I}
        if self.I <= 1000:
            out["hold_starts"] = list(self.hold_starts)
        out.update(self.derived)
        return out


class RandomHoldSchedule(Schedule):
    """Decrease-and-hold boundaries, but each hold freezes the reference value
    of a time drawn uniformly from ``[t_i, t_{i+1})`` instead of ``t_i``."""

    kind = "random_hold"

    def __init__(self, params, t0, I, next_start, seed: int = 0, derived=None):
        super().__init__(params, t0, I, next_start, derived)
        self.seed = int(seed)
        self._times: dict[int, int] = {}

    def hold_time(self, i: int) -> float:
        if i not in self._times:
            if not 0 <= i < self.I:
                raise IndexError(f"hold stage {i} outside [0, {self.I})")
            while len(self._starts) <= i + 1:
                self._extend_to(self._starts[-1])
            lo, hi = self._starts[i], self._starts[i + 1]
            rng = np.random.default_rng([self.seed, i])
            self._times[i] = int(rng.integers(lo, hi))
        return self._times[i]

    def describe(self) -> dict:
        out = super().describe()
        out["seed"] = self.seed
        return out


class ConstantSchedule(StepsizeSchedule):
    kind = "constant"

    def __init__(self, eps: float, eta: float):
        if not 0 < eps <= 1:
            raise ValueError(f"constant eps must lie in (0, 1], got {eps}")
        if not eta > 0:
            raise ValueError(f"constant eta must be positive, got {eta}")
        self._eps, self._eta = float(eps), float(eta)

    def eps(self, k: int) -> float:
        return self._eps

    def eta(self, k: int) -> float:
        return self._eta

    def eps_sequence(self, n: int) -> np.ndarray:
        return np.full(n, self._eps)

    def eta_sequence(self, n: int) -> np.ndarray:
        return np.full(n, self._eta)

    def describe(self) -> dict:
        return {"kind": self.kind, "eps": self._eps, "eta": self._eta}


def _uniform_next(hold: int):
    return lambda t: t + hold


def _check_practical(sp: ScheduleParams) -> tuple[int, int, int]:
    t0, hold, n = sp.practical_t0, sp.practical_hold, sp.practical_n_holds
    if t0 is None or hold is None or n is None:
        raise ValueError("practical mode needs practical_t0, practical_hold and practical_n_holds")
    if hold <= 0:
        raise ValueError(f"practical_hold must be positive, got {hold}")
    if t0 < 0 or n < 0:
        raise ValueError("practical_t0 and practical_n_holds must be nonnegative")
    return int(t0), int(hold), int(n)


def practical_schedule(sp: ScheduleParams) -> Schedule:
    """Uniform holds of length ``practical_hold`` starting at ``practical_t0``."""
    t0, hold, n = _check_practical(sp)
    return Schedule(sp, t0, n, _uniform_next(hold))


def random_hold_schedule(sp: ScheduleParams, seed: int = 0) -> RandomHoldSchedule:
    t0, hold, n = _check_practical(sp)
    return RandomHoldSchedule(sp, t0, n, _uniform_next(hold), seed=seed)


def diminishing_schedule(sp: ScheduleParams) -> Schedule:
    """The bare reference functions (no holds)."""
    sched = Schedule(sp, 0, 0, _uniform_next(1))
    sched.kind = "diminishing"
    return sched


def theoretical_schedule(sp: ScheduleParams, pc: ProblemConstants) -> Schedule:
    if sp.mode != "theoretical":
        raise ValueError("theoretical_schedule needs mode='theoretical'")
    tc = derive_constants(sp, pc)
    return Schedule(sp, tc.t0, tc.I,
                    lambda t: t + theoretical_hold_length(sp, pc.rho, t),
                    derived={"constants": asdict(tc), "problem": asdict(pc)})
