"""Outcome dynamics under interference, ground-truth TTE and the state-evolution oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .design import DesignSchedule, TreatmentMatrix, constant_treatment
from .features import MomentSeries
from .network import Graph, InterferenceMatrix

Spillover = Literal["identity", "sine"]


class SimulationDivergenceError(FloatingPointError):
    def __init__(self, t: int, i: int):
        super().__init__(f"non-finite outcome at period {t}, unit {i}")
        self.t, self.i = t, i


@dataclass(frozen=True)
class OutcomeParams:
    alpha: float = 1.0
    beta: float = 0.5
    delta: float = 1.0
    gamma: float = 1.0
    noise_sd: float = 0.1
    spillover: Spillover = "identity"

    def __post_init__(self):
        if not abs(self.beta) < 1:
            raise ValueError("|beta| must be < 1")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")
        if self.spillover not in ("identity", "sine"):
            raise ValueError(f"unknown spillover {self.spillover!r}")

    def g(self, x):
        if self.spillover == "identity":
            return x
        return np.sin(math.pi * x)

    def equilibrium_tte(self) -> float:
        """Fixed-point TTE of the mean recursion on a graph without isolated nodes."""
        g1, g0 = float(self.g(1.0)), float(self.g(0.0))
        return (self.delta * (g1 - g0) + self.gamma) / (1 - self.beta)

    def control_equilibrium(self) -> float:
        return (self.alpha + self.delta * float(self.g(0.0))) / (1 - self.beta)


@dataclass(frozen=True, eq=False)
class OutcomeMatrix:
    y: np.ndarray

    @property
    def horizon(self) -> int:
        return self.y.shape[0] - 1


@dataclass(frozen=True, eq=False)
class TteSeries:
    values: np.ndarray


def step_outcomes(graph: Graph, params: OutcomeParams, y_t, w_next, noise) -> np.ndarray:
    """One period of the neighbor-averaged outcome model."""
    y_t = np.asarray(y_t, dtype=float)
    w_next = np.asarray(w_next, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if not (y_t.shape == w_next.shape == noise.shape == (graph.n,)):
        raise ValueError(f"vector lengths must equal graph size {graph.n}")
    return (
        params.alpha
        + params.beta * graph.neighbor_mean(y_t)
        + params.delta * params.g(graph.neighbor_mean(w_next))
        + params.gamma * w_next
        + noise
    )


def _check_finite(row: np.ndarray, t: int) -> None:
    if not np.all(np.isfinite(row)):
        raise SimulationDivergenceError(t, int(np.flatnonzero(~np.isfinite(row))[0]))


def _as_w(w) -> np.ndarray:
    return np.asarray(w.w if isinstance(w, TreatmentMatrix) else w)


def _iterate(graph: Graph, params: OutcomeParams, w: np.ndarray, y0: np.ndarray,
             noise: np.ndarray) -> np.ndarray:
    T = w.shape[0] - 1
    y = np.empty((T + 1, graph.n))
    y[0] = y0
    _check_finite(y[0], 0)
    for t in range(T):
        y[t + 1] = step_outcomes(graph, params, y[t], w[t + 1], noise[t])
        _check_finite(y[t + 1], t + 1)
    return y


def draw_noise(rng: np.random.Generator, horizon: int, n: int, sd: float) -> np.ndarray:
    # row t is the noise entering period t+1
    return sd * rng.standard_normal((horizon, n))


def run_panel(graph: Graph, params: OutcomeParams, w, seed=None, y0=None,
              rng: np.random.Generator | None = None, noise: np.ndarray | None = None) -> OutcomeMatrix:
    """Simulate a full outcome panel; row 0 is ``y0`` (standard normal if omitted)."""
    w = _as_w(w)
    if w.ndim != 2 or w.shape[1] != graph.n:
        raise ValueError(f"treatment panel shape {w.shape} does not match graph size {graph.n}")
    if rng is None:
        rng = np.random.default_rng(seed)
    T = w.shape[0] - 1
    if y0 is None:
        y0 = rng.standard_normal(graph.n)
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (graph.n,):
        raise ValueError("y0 length must equal graph size")
    if noise is None:
        noise = draw_noise(rng, T, graph.n, params.noise_sd)
    return OutcomeMatrix(_iterate(graph, params, w, y0, noise))


def burn_in(graph: Graph, params: OutcomeParams, y0, steps: int,
            rng: np.random.Generator) -> np.ndarray:
    """Run ``steps`` all-control periods starting from ``y0``; returns the last row."""
    y = np.asarray(y0, dtype=float)
    zeros = np.zeros(graph.n)
    for t in range(steps):
        y = step_outcomes(graph, params, y, zeros, params.noise_sd * rng.standard_normal(graph.n))
        _check_finite(y, t + 1)
    return y


def ground_truth_single(graph: Graph, params: OutcomeParams, horizon: int, y0,
                        noise: np.ndarray) -> np.ndarray:
    """Per-period TTE of one common-random-number twin pair."""
    y1 = _iterate(graph, params, constant_treatment(1, graph.n, horizon), y0, noise)
    y0_ = _iterate(graph, params, constant_treatment(0, graph.n, horizon), y0, noise)
    return (y1 - y0_).mean(axis=1)


def ground_truth_tte(graph: Graph, params: OutcomeParams, T: int, seed=None, reps: int = 1,
                     y0=None) -> TteSeries:
    if reps < 1:
        raise ValueError("reps must be >= 1")
    acc = np.zeros(T + 1)
    for r in range(reps):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(r,)))
        start = rng.standard_normal(graph.n) if y0 is None else np.asarray(y0, dtype=float)
        acc += ground_truth_single(graph, params, T, start, draw_noise(rng, T, graph.n, params.noise_sd))
    return TteSeries(acc / reps)


# Dense-ensemble form: y_{t+1} = A g(y_t, w) + e

@dataclass(frozen=True)
class UpdateCoefficients:
    """``g(y, w_prev, w_next) = a*y + b*w_next + c*y*w_prev + d``."""

    a: float = 1.0
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0

    def __call__(self, y, w_prev, w_next):
        return self.a * y + self.b * w_next + self.c * y * w_prev + self.d


UpdateFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def run_ensemble_panel(A: InterferenceMatrix, update: UpdateFn, w, noise_sd: float, y0,
                       rng: np.random.Generator | None = None,
                       noise: np.ndarray | None = None) -> OutcomeMatrix:
    w = _as_w(w).astype(float)
    T = w.shape[0] - 1
    if noise is None:
        noise = draw_noise(rng if rng is not None else np.random.default_rng(), T, A.n, noise_sd)
    y = np.empty((T + 1, A.n))
    y[0] = y0
    for t in range(T):
        y[t + 1] = A.entries @ update(y[t], w[t], w[t + 1]) + noise[t]
        _check_finite(y[t + 1], t + 1)
    return OutcomeMatrix(y)


@dataclass(frozen=True)
class StateEvolutionSpec:
    mu: float
    sigma: float
    noise_sd: float
    update: UpdateFn
    design: DesignSchedule
    nu0: float = 0.0
    rho0: float = 1.0
    kind: Literal["bernoulli", "staggered"] = "bernoulli"


def _joint_treated(p_prev: float, p_next: float, kind: str) -> float:
    """P(w_prev = 1 and w_next = 1) under the design's coupling."""
    if kind == "staggered":
        return min(p_prev, p_next)
    return p_prev * p_next


def _se_step_closed(u: UpdateCoefficients, nu: float, rho2: float, p_prev: float,
                    p_next: float, kind: str) -> tuple[float, float]:
    # g = Y (a + c W) + (b W' + d) with Y ~ N(nu, rho2) independent of (W, W')
    a, b, c, d = u.a, u.b, u.c, u.d
    p11 = _joint_treated(p_prev, p_next, kind)
    m1 = (a + c * p_prev) * nu + b * p_next + d
    ey2 = nu * nu + rho2
    e_slope2 = a * a + (2 * a * c + c * c) * p_prev
    e_cross = a * b * p_next + a * d + c * b * p11 + c * d * p_prev
    e_off2 = (b * b + 2 * b * d) * p_next + d * d
    m2 = ey2 * e_slope2 + 2 * nu * e_cross + e_off2
    return m1, m2


def state_evolution_oracle(spec: StateEvolutionSpec, T: int, mc_samples: int | None = None,
                           seed=None) -> MomentSeries:
    """Iterate the mean/variance state-evolution recursion.

    With linear-in-y ``UpdateCoefficients`` and ``mc_samples=None`` the
    expectations are exact; otherwise they are Monte-Carlo averages over
    ``mc_samples`` draws of (Z, w).
    """
    probs = spec.design.probabilities()
    if probs.size < T + 1:
        raise ValueError(f"design horizon {probs.size - 1} shorter than T={T}")
    closed = mc_samples is None
    if closed and not isinstance(spec.update, UpdateCoefficients):
        raise ValueError("closed form needs UpdateCoefficients; pass mc_samples")
    if not closed and mc_samples < 1000:
        raise ValueError("mc_samples must be >= 1000")
    rng = np.random.default_rng(seed)
    nu = np.empty(T + 1)
    rho2 = np.empty(T + 1)
    nu[0], rho2[0] = spec.nu0, spec.rho0 ** 2
    clamped = False
    for t in range(T):
        if closed:
            m1, m2 = _se_step_closed(spec.update, nu[t], rho2[t], probs[t], probs[t + 1], spec.kind)
        else:
            z = rng.standard_normal(mc_samples)
            u_prev = rng.random(mc_samples)
            u_next = u_prev if spec.kind == "staggered" else rng.random(mc_samples)
            w_prev = (u_prev < probs[t]).astype(float)
            w_next = (u_next < probs[t + 1]).astype(float)
            g = spec.update(nu[t] + math.sqrt(rho2[t]) * z, w_prev, w_next)
            m1, m2 = g.mean(), (g * g).mean()
        nu[t + 1] = spec.mu * m1
        v = spec.sigma ** 2 * m2 + spec.noise_sd ** 2
        if v < 0:
            v, clamped = 0.0, True
        rho2[t + 1] = v
    return MomentSeries(nu, rho2, probs[:T + 1].copy(), clamped=clamped)
