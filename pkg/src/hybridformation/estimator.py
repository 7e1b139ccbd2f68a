"""Scikit-learn style wrapper around the partition, controllers and supervisor."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .abstraction import RegionLabel
from .des import R_F
from .partition import PartitionSpec, classify, locate, to_spherical
from .runtime import ControllerCache, VertexField, check_step, initial_supervisor_state
from .scenarios import build_closed_loop
from .synthesis import DEFAULT_KAPPA, ControlLabel


class HybridFormationController(BaseEstimator, TransformerMixin):
    """Supervised formation controller over a spherical partition.

    ``fit`` builds the partition and the closed-loop supervisor.  Inputs are
    relative positions, shape ``(n_samples, 3)``, measured from the desired
    position.  ``transform`` returns region indices; ``predict`` the relative
    velocity command the supervisor would issue from each position at rest
    (no pending alarm, fresh supervisor state).
    """

    def __init__(self, radius_m=50.0, n_r=15, n_theta=20, n_phi=10, v_max=5.0,
                 kappa=DEFAULT_KAPPA, mode="derived", step_s=0.01):
        self.radius_m = radius_m
        self.n_r = n_r
        self.n_theta = n_theta
        self.n_phi = n_phi
        self.v_max = v_max
        self.kappa = kappa
        self.mode = mode
        self.step_s = step_s

    def fit(self, X=None, y=None):
        if self.mode not in ("derived", "paper"):
            raise ValueError(f"mode must be 'derived' or 'paper', got {self.mode!r}")
        if not 0 < self.kappa <= 1:
            raise ValueError(f"kappa must be in (0, 1], got {self.kappa}")
        self.spec_ = PartitionSpec(float(self.radius_m), int(self.n_r), int(self.n_theta), int(self.n_phi))
        check_step(self.spec_, self.v_max, self.step_s)
        self.closed_loop_ = build_closed_loop(self.spec_)
        self.cache_ = ControllerCache(self.spec_, self.v_max, self.mode, self.kappa)
        self.n_features_in_ = 3
        if X is not None:
            self._validate(X)
        return self

    def _validate(self, X):
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != 3:
            raise ValueError(f"expected 3 columns (relative x, y, z), got {X.shape[1]}")
        r = np.linalg.norm(X, axis=1)
        if np.any(r > self.spec_.radius_m):
            raise ValueError(f"{int(np.sum(r > self.spec_.radius_m))} points lie outside the control horizon")
        return X

    def transform(self, X):
        """Region indices ``(i, j, k)`` per row; boundary points go to the lower-index region."""
        check_is_fitted(self, "spec_")
        X = self._validate(X)
        return np.array([locate(self.spec_, s) for s in to_spherical(X)], dtype=int)

    def actions(self, X):
        """Actuation label the supervisor selects at each row's region."""
        check_is_fitted(self, "spec_")
        out = []
        for row in self.transform(X):
            sup = initial_supervisor_state(self.closed_loop_, tuple(row))
            acts = [e for e in self.closed_loop_.enabled(sup) if e in self.closed_loop_.controllable]
            out.append(acts[0].label if len(acts) == 1 else None)
        return out

    def predict(self, X):
        """Relative velocity command ``(n_samples, 3)``."""
        X = self._validate(X) if hasattr(self, "spec_") else None
        check_is_fitted(self, "spec_")
        regions = self.transform(X)
        labels = self.actions(X)
        U = np.empty_like(X)
        for n, (x, reg, lab) in enumerate(zip(X, regions, labels)):
            c = self.cache_.get(tuple(reg), lab)
            U[n] = VertexField(self.spec_.bounds(tuple(reg)), c.u)(tuple(x))
        return U

    def score(self, X, y=None):
        """Fraction of rows already in formation (shell 1)."""
        return float(np.mean(self.transform(X)[:, 0] == 1))
