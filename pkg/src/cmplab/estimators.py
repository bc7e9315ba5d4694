"""TTE estimators: difference in means, Horvitz-Thompson, PolyFit and the CMP family."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .design import DesignSchedule
from .features import (FeatureMatrix, FeatureSet, MomentSeries, build_features, compute_moments,
                       feature_row)

EstimatorName = Literal["DM", "HT", "PolyFit", "FO-CMP", "HO-CMP"]
ESTIMATORS: tuple[str, ...] = ("DM", "HT", "PolyFit", "FO-CMP", "HO-CMP")


class UndefinedEstimateError(ValueError):
    pass


class InterpolationError(ValueError):
    pass


class UnderdeterminedFitError(ValueError):
    pass


class RolloutDivergenceError(FloatingPointError):
    def __init__(self, step: int):
        super().__init__(f"non-finite counterfactual iterate at step {step}")
        self.step = step


@dataclass(frozen=True, eq=False)
class TteEstimate:
    values: np.ndarray
    estimator: str


def difference_in_means(y_col, w_col) -> float:
    y = np.asarray(y_col, dtype=float)
    w = np.asarray(w_col).astype(bool)
    if w.all() or not w.any():
        raise UndefinedEstimateError("difference in means needs treated and control units")
    return float(y[w].mean() - y[~w].mean())


def horvitz_thompson(y_col, w_col, pi_t: float) -> float:
    if not 0.0 < pi_t < 1.0:
        raise UndefinedEstimateError(f"propensity {pi_t} must lie strictly inside (0, 1)")
    y = np.asarray(y_col, dtype=float)
    w = np.asarray(w_col, dtype=float)
    return float(np.mean(y * w / pi_t - y * (1 - w) / (1 - pi_t)))


# PolyFit

@dataclass(frozen=True, eq=False)
class LagrangePolynomial:
    """Interpolating polynomial through ``(x, y)`` nodes, evaluated in Lagrange form."""

    x: np.ndarray
    y: np.ndarray

    def basis(self, at: float) -> np.ndarray:
        x = self.x
        out = np.empty(x.size)
        for j in range(x.size):
            others = np.delete(x, j)
            out[j] = np.prod((at - others) / (x[j] - others))
        return out

    def __call__(self, at):
        at = np.asarray(at, dtype=float)
        vals = [float(self.basis(a) @ self.y) for a in at.ravel()]
        return np.array(vals).reshape(at.shape) if at.ndim else vals[0]

    @property
    def degree(self) -> int:
        return self.x.size - 1


@dataclass(frozen=True, eq=False)
class PolyFitResult:
    poly: LagrangePolynomial
    tte: float
    extrapolated: bool  # largest node below pi = 1


def polyfit(nodes: Sequence[tuple[float, float]]) -> PolyFitResult:
    if len(nodes) < 2:
        raise InterpolationError("need at least two nodes")
    x = np.array([p for p, _ in nodes], dtype=float)
    y = np.array([v for _, v in nodes], dtype=float)
    if np.unique(x).size != x.size:
        raise InterpolationError(f"duplicate probabilities among nodes {x.tolist()}")
    if not np.any(x == 0.0):
        raise InterpolationError("nodes must include the pi = 0 baseline")
    poly = LagrangePolynomial(x, y)
    # weights of p(1) - p(0) in terms of the node values
    weights = poly.basis(1.0) - poly.basis(0.0)
    return PolyFitResult(poly, float(weights @ y), bool(x.max() < 1.0))


def polyfit_tte(nodes: Sequence[tuple[float, float]]) -> float:
    return polyfit(nodes).tte


def stage_end_nodes(m: MomentSeries, schedule: DesignSchedule,
                    abscissa: Literal["design", "realized"] = "design") -> list[tuple[float, float]]:
    """``(pi, nu_hat)`` at the last period of each stage, baseline stage included."""
    nodes = []
    for p, end in schedule.stages:
        x = p if abscissa == "design" else float(m.w_bar[end])
        nodes.append((x, float(m.nu_hat[end])))
    return nodes


# CMP

@dataclass(frozen=True, eq=False)
class CmpModel:
    feature_set: FeatureSet
    coef_mean: np.ndarray
    coef_var: np.ndarray | None
    diagnostics: dict = field(default_factory=dict)

    def predict(self, x: np.ndarray) -> tuple[float, float | None]:
        nu = float(self.coef_mean @ x)
        rho2 = None if self.coef_var is None else float(self.coef_var @ x)
        return nu, rho2


def _lstsq(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, int]:
    """QR solve when X has full column rank, SVD minimum-norm solution otherwise."""
    rank = int(np.linalg.matrix_rank(X))
    if rank == X.shape[1]:
        q, r = np.linalg.qr(X)
        return np.linalg.solve(r, q.T @ y), rank
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return coef, rank


def fit_cmp(fm: FeatureMatrix) -> CmpModel:
    """Least-squares fit of next-period moments on the feature rows."""
    X = fm.X
    if X.shape[0] < X.shape[1]:
        raise UnderdeterminedFitError(f"{X.shape[0]} rows for {X.shape[1]} coefficients")
    coef_mean, rank = _lstsq(X, fm.targets[:, 0])
    diag = {
        "rank": rank,
        "rank_deficient": rank < X.shape[1],
        "rss_mean": float(np.sum((X @ coef_mean - fm.targets[:, 0]) ** 2)),
    }
    coef_var = None
    if fm.feature_set == "HO":
        coef_var, _ = _lstsq(X, fm.targets[:, 1])
        diag["rss_var"] = float(np.sum((X @ coef_var - fm.targets[:, 1]) ** 2))
    return CmpModel(fm.feature_set, coef_mean, coef_var, diag)


def _iterate_arm(model: CmpModel, nu0: float, rho2_0: float, wbar: float, steps: int,
                 flags: dict) -> tuple[np.ndarray, np.ndarray]:
    nu = np.empty(steps + 1)
    rho2 = np.empty(steps + 1)
    nu[0], rho2[0] = nu0, rho2_0
    for t in range(steps):
        x = feature_row(nu[t], rho2[t], wbar, wbar, model.feature_set)
        with np.errstate(over="ignore", invalid="ignore"):
            nxt, v = model.predict(x)
        if v is None:
            v = rho2[t]
        elif v < 0:
            v = 0.0
            flags["variance_clamped"] = True
        if not (np.isfinite(nxt) and np.isfinite(v)):
            raise RolloutDivergenceError(t + 1)
        nu[t + 1], rho2[t + 1] = nxt, v
    return nu, rho2


def cmp_counterfactual_rollout(model: CmpModel, nu0: float, rho2_0: float, T: int) -> TteEstimate:
    """Iterate the fitted map under global treatment and global control."""
    if T < 1:
        raise ValueError("T must be >= 1")
    flags: dict = {}
    nu1, _ = _iterate_arm(model, nu0, rho2_0, 1.0, T, flags)
    nu0_, _ = _iterate_arm(model, nu0, rho2_0, 0.0, T, flags)
    tte = nu1 - nu0_
    tte[0] = 0.0
    if flags:
        model.diagnostics.update(flags)
    return TteEstimate(tte, f"{model.feature_set}-CMP")


def cmp_equilibrium(model: CmpModel, pi: float, nu0: float, rho2_0: float, steps: int) -> float:
    """Mean reached after ``steps`` iterations of the fitted map at constant treated fraction ``pi``."""
    nu, _ = _iterate_arm(model, nu0, rho2_0, pi, steps, {})
    return float(nu[-1])


def cmp_estimate(m: MomentSeries, feature_set: FeatureSet) -> tuple[CmpModel, TteEstimate]:
    model = fit_cmp(build_features(m, feature_set))
    return model, cmp_counterfactual_rollout(model, m.nu_hat[0], m.rho2_hat[0], m.horizon)


# Panel-level drivers

def dm_series(y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Per-period DM; NaN where a period has no treated or no control units."""
    out = np.full(y.shape[0], np.nan)
    for t in range(y.shape[0]):
        try:
            out[t] = difference_in_means(y[t], w[t])
        except UndefinedEstimateError:
            pass
    return out


def ht_series(y: np.ndarray, w: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Per-period HT with the design probability; NaN where it is 0 or 1."""
    out = np.full(y.shape[0], np.nan)
    for t in range(y.shape[0]):
        if 0.0 < probs[t] < 1.0:
            out[t] = horvitz_thompson(y[t], w[t], probs[t])
    return out


def run_estimators(y: np.ndarray, w: np.ndarray, schedule: DesignSchedule,
                   estimators: Sequence[str], moments: MomentSeries | None = None,
                   polyfit_abscissa: Literal["design", "realized"] = "design") -> dict[str, np.ndarray]:
    """Every requested estimator's TTE trajectory for one observed panel."""
    if moments is None:
        moments = compute_moments(y, w)
    T = y.shape[0] - 1
    out = {}
    for name in estimators:
        if name == "DM":
            out[name] = dm_series(y, w)
        elif name == "HT":
            out[name] = ht_series(y, w, schedule.probabilities())
        elif name == "PolyFit":
            out[name] = np.full(T + 1, polyfit_tte(stage_end_nodes(moments, schedule, polyfit_abscissa)))
        elif name in ("FO-CMP", "HO-CMP"):
            out[name] = cmp_estimate(moments, name[:2])[1].values
        else:
            raise ValueError(f"unknown estimator {name!r}")
    return out
