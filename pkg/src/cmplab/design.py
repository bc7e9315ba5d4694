"""Treatment-assignment panels for staggered-rollout and Bernoulli designs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

DesignKind = Literal["staggered", "bernoulli"]


class DesignError(ValueError):
    pass


@dataclass(frozen=True)
class DesignSchedule:
    """Piecewise-constant treatment probabilities.

    ``stages`` is a sequence of ``(pi, t_end)``; stage ``k`` covers periods
    ``(t_end[k-1], t_end[k]]`` and the first stage covers ``[0, t_end[0]]``.
    The first stage must be a pure-control stage.
    """

    stages: tuple[tuple[float, int], ...]

    def __post_init__(self):
        stages = tuple((float(p), int(t)) for p, t in self.stages)
        object.__setattr__(self, "stages", stages)
        if not stages:
            raise DesignError("schedule needs at least one stage")
        if stages[0][0] != 0.0:
            raise DesignError("first stage must have pi = 0 (period 0 is all control)")
        if stages[0][1] < 0:
            raise DesignError("stage ends must be non-negative")
        ends = [t for _, t in stages]
        if any(b <= a for a, b in zip(ends, ends[1:])):
            raise DesignError(f"stage ends must be strictly increasing, got {ends}")
        for p, _ in stages:
            if not 0.0 <= p <= 1.0:
                raise DesignError(f"stage probability {p} outside [0, 1]")

    @classmethod
    def rollout(cls, pis: Sequence[float], stage_length: int) -> "DesignSchedule":
        """Control at period 0, then stage ``l`` (1-based) ends at ``l * stage_length``."""
        return cls(((0.0, 0),) + tuple((p, (k + 1) * stage_length) for k, p in enumerate(pis)))

    @classmethod
    def constant(cls, pi: float, horizon: int) -> "DesignSchedule":
        return cls(((0.0, 0), (pi, horizon)))

    @property
    def horizon(self) -> int:
        return self.stages[-1][1]

    @property
    def n_stages(self) -> int:
        """Number of treated stages (the control stage excluded)."""
        return len(self.stages) - 1

    @property
    def treated_stages(self) -> tuple[tuple[float, int], ...]:
        return self.stages[1:]

    def probabilities(self) -> np.ndarray:
        """Per-period treatment probability, length ``horizon + 1``."""
        out = np.empty(self.horizon + 1)
        start = 0
        for p, end in self.stages:
            out[start:end + 1] = p
            start = end + 1
        return out

    def is_monotone(self) -> bool:
        pis = [p for p, _ in self.stages]
        return all(b >= a for a, b in zip(pis, pis[1:]))

    def is_identifiable(self) -> bool:
        """True when periods 1..T see at least two distinct probabilities."""
        return len(np.unique(self.probabilities()[1:])) >= 2

    def validate_for_estimation(self) -> None:
        if not self.is_identifiable():
            raise DesignError("need at least two distinct treatment probabilities in periods 1..T")


@dataclass(frozen=True, eq=False)
class TreatmentMatrix:
    w: np.ndarray  # (T+1, N) int8
    schedule: DesignSchedule
    kind: DesignKind

    @property
    def horizon(self) -> int:
        return self.w.shape[0] - 1

    @property
    def n(self) -> int:
        return self.w.shape[1]

    def treated_fraction(self) -> np.ndarray:
        return self.w.mean(axis=1)


def _freeze(w: np.ndarray) -> np.ndarray:
    w = w.astype(np.int8)
    w.setflags(write=False)
    return w


def staggered_from_uniforms(u: np.ndarray, schedule: DesignSchedule) -> TreatmentMatrix:
    """Threshold coupling: unit i is treated at t iff ``u[i] < pi(t)``."""
    if not schedule.is_monotone():
        raise DesignError("staggered rollout requires non-decreasing stage probabilities")
    u = np.asarray(u, dtype=float)
    w = u[None, :] < schedule.probabilities()[:, None]
    return TreatmentMatrix(_freeze(w), schedule, "staggered")


def staggered_rollout(n: int, schedule: DesignSchedule, seed=None,
                      rng: np.random.Generator | None = None) -> TreatmentMatrix:
    if n < 1:
        raise DesignError("n must be >= 1")
    if not schedule.is_monotone():
        raise DesignError("staggered rollout requires non-decreasing stage probabilities")
    if rng is None:
        rng = np.random.default_rng(seed)
    return staggered_from_uniforms(rng.random(n), schedule)


def bernoulli_design(n: int, schedule: DesignSchedule, seed=None,
                     rng: np.random.Generator | None = None) -> TreatmentMatrix:
    if n < 1:
        raise DesignError("n must be >= 1")
    if rng is None:
        rng = np.random.default_rng(seed)
    probs = schedule.probabilities()
    w = rng.random((probs.size, n)) < probs[:, None]
    w[0] = False
    return TreatmentMatrix(_freeze(w), schedule, "bernoulli")


def make_design(kind: DesignKind, n: int, schedule: DesignSchedule,
                rng: np.random.Generator) -> TreatmentMatrix:
    if kind == "staggered":
        return staggered_rollout(n, schedule, rng=rng)
    if kind == "bernoulli":
        return bernoulli_design(n, schedule, rng=rng)
    raise DesignError(f"unknown design kind {kind!r}")


def constant_treatment(value: int, n: int, horizon: int) -> np.ndarray:
    """All-control (0) or all-treated (1) panel from period 1 on; row 0 is control."""
    w = np.full((horizon + 1, n), int(value), dtype=np.int8)
    w[0] = 0
    return w
