"""Per-period sample moments and FO/HO feature rows."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

FeatureSet = Literal["FO", "HO"]

FEATURE_NAMES = {
    "FO": ("intercept", "nu", "wbar_next", "nu_x_wbar"),
    "HO": ("intercept", "nu", "wbar_next", "nu_x_wbar", "rho2", "wbar_next_sq"),
}


@dataclass(frozen=True, eq=False)
class MomentSeries:
    nu_hat: np.ndarray
    rho2_hat: np.ndarray
    w_bar: np.ndarray
    clamped: bool = False

    @property
    def horizon(self) -> int:
        return self.nu_hat.size - 1


def _as_array(x) -> np.ndarray:
    # OutcomeMatrix / TreatmentMatrix or a raw array
    return np.asarray(getattr(x, "y", getattr(x, "w", x)))


def compute_moments(y, w) -> MomentSeries:
    """Row-wise mean, 1/N variance and treated fraction of a panel."""
    y = _as_array(y).astype(float)
    w = _as_array(w)
    if y.ndim != 2 or y.shape != w.shape:
        raise ValueError(f"outcome shape {y.shape} and treatment shape {w.shape} differ")
    if y.shape[1] == 0:
        raise ValueError("panel has no units")
    nu = y.mean(axis=1)
    rho2 = ((y - nu[:, None]) ** 2).mean(axis=1)
    return MomentSeries(nu, rho2, w.mean(axis=1))


def feature_row(nu: float, rho2: float, wbar: float, wbar_next: float,
                feature_set: FeatureSet) -> np.ndarray:
    fo = [1.0, nu, wbar_next, nu * wbar]
    if feature_set == "FO":
        return np.array(fo)
    if feature_set == "HO":
        return np.array(fo + [rho2, wbar_next * wbar_next])
    raise ValueError(f"unknown feature set {feature_set!r}")


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    X: np.ndarray  # (T, K+1), leading intercept column
    targets: np.ndarray  # (T, 2): next-period mean and variance
    feature_set: FeatureSet

    @property
    def columns(self) -> tuple[str, ...]:
        return FEATURE_NAMES[self.feature_set]


def build_features(m: MomentSeries, feature_set: FeatureSet) -> FeatureMatrix:
    """Rows t = 0..T-1 pair features at t with moments at t+1."""
    if feature_set not in FEATURE_NAMES:
        raise ValueError(f"unknown feature set {feature_set!r}")
    T = m.horizon
    if T < 2:
        raise ValueError("need at least two transitions (T >= 2)")
    nu, rho2, wb = m.nu_hat, m.rho2_hat, m.w_bar
    cols = [np.ones(T), nu[:-1], wb[1:], nu[:-1] * wb[:-1]]
    if feature_set == "HO":
        cols += [rho2[:-1], wb[1:] ** 2]
    X = np.column_stack(cols)
    targets = np.column_stack([nu[1:], rho2[1:]])
    return FeatureMatrix(X, targets, feature_set)
