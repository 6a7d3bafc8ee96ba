"""Proximal operators for every per-block subproblem used by the solvers.

All operators are exact closed forms. Thresholds may be scalars or arrays
broadcastable against the input, which lets diagonal-quadratic subproblems
reuse the same formulas entrywise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "prox_l1",
    "prox_l1_nonneg",
    "prox_nuclear",
    "prox_sq",
    "prox_l21",
    "project_nonneg",
    "ProxFunction",
]


def prox_l1(v: np.ndarray, t) -> np.ndarray:
    """Soft threshold: minimizes ``t ||x||_1 + 0.5 ||x - v||^2``.

    Ties at ``|v_j| = t`` resolve to exactly 0.
    """
    v = np.asarray(v, dtype=float)
    _check_threshold(t)
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def prox_l1_nonneg(v: np.ndarray, t) -> np.ndarray:
    """Minimizes ``t ||x||_1 + 0.5 ||x - v||^2`` over ``x >= 0``."""
    v = np.asarray(v, dtype=float)
    _check_threshold(t)
    return np.maximum(v - t, 0.0)


def prox_nuclear(V: np.ndarray, t: float) -> np.ndarray:
    """Singular value thresholding: minimizes ``t ||X||_* + 0.5 ||X - V||_F^2``."""
    V = np.asarray(V, dtype=float)
    if t <= 0:
        raise ValueError("threshold must be positive")
    try:
        U, s, Wt = np.linalg.svd(V, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "SVD failed in singular value thresholding; matrix has "
            f"shape {V.shape}, max |entry| {np.max(np.abs(V)):.3e}, "
            f"any non-finite: {bool(~np.all(np.isfinite(V)))}"
        ) from exc
    s = np.maximum(s - t, 0.0)
    return (U * s) @ Wt


def prox_sq(v: np.ndarray, t: float, anchor_weight: float) -> np.ndarray:
    """Minimizes ``(t/2) ||x||^2 + (w/2) ||x - v||^2``: ``x = w v / (t + w)``."""
    v = np.asarray(v, dtype=float)
    if t + anchor_weight <= 0:
        raise ValueError("quadratic weights must sum to a positive value")
    return (anchor_weight / (t + anchor_weight)) * v


def prox_l21(V: np.ndarray, t: float) -> np.ndarray:
    """Columnwise group soft threshold: minimizes ``t ||X||_{2,1} + 0.5 ||X - V||_F^2``."""
    V = np.asarray(V, dtype=float)
    _check_threshold(t)
    norms = np.linalg.norm(V, axis=0)
    scale = np.zeros_like(norms)
    nz = norms > 0.0
    scale[nz] = np.maximum(1.0 - t / norms[nz], 0.0)
    return V * scale[None, :]


def project_nonneg(v: np.ndarray) -> np.ndarray:
    """Componentwise ``max(v, 0)``; normalizes ``-0.0`` to ``+0.0``."""
    return np.maximum(np.asarray(v, dtype=float), 0.0) + 0.0


def _check_threshold(t) -> None:
    if np.any(np.asarray(t) <= 0):
        raise ValueError("threshold must be positive")


_ENTRYWISE_KINDS = frozenset(
    {"l1", "l1-nonneg", "sq-frobenius", "indicator-nonneg", "zero"}
)
_ALL_KINDS = _ENTRYWISE_KINDS | {"nuclear", "l21"}


@dataclass(frozen=True)
class ProxFunction:
    """A weighted convex term ``weight * g(x)`` with a closed-form prox.

    kind:
        ``l1``               ``||x||_1``
        ``l1-nonneg``        ``||x||_1`` plus the nonnegativity indicator
        ``nuclear``          ``||X||_*``
        ``sq-frobenius``     ``(1/2) ||x||^2`` (weight plays the role of lambda)
        ``l21``              sum of column 2-norms
        ``indicator-nonneg`` 0 on ``x >= 0``, infinity elsewhere
        ``zero``             identically 0
    """

    kind: str
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in _ALL_KINDS:
            raise ValueError(f"unknown prox kind {self.kind!r}")
        if self.weight < 0:
            raise ValueError("weight must be nonnegative")

    @property
    def entrywise(self) -> bool:
        """Whether the prox separates over entries (diagonal solves allowed)."""
        return self.kind in _ENTRYWISE_KINDS

    def value(self, v: np.ndarray) -> float:
        v = np.asarray(v, dtype=float)
        if self.kind == "zero" or self.weight == 0.0 and self.kind not in (
            "indicator-nonneg",
            "l1-nonneg",
        ):
            return 0.0
        if self.kind == "l1":
            return self.weight * float(np.sum(np.abs(v)))
        if self.kind == "l1-nonneg":
            if np.any(v < 0.0):
                return float("inf")
            return self.weight * float(np.sum(v))
        if self.kind == "nuclear":
            s = np.linalg.svd(v, compute_uv=False)
            return self.weight * float(np.sum(s))
        if self.kind == "sq-frobenius":
            return 0.5 * self.weight * float(np.vdot(v, v))
        if self.kind == "l21":
            return self.weight * float(np.sum(np.linalg.norm(v, axis=0)))
        if np.any(v < 0.0):
            return float("inf")
        return 0.0

    def prox(self, v: np.ndarray, t) -> np.ndarray:
        """Minimize ``t * weight * g(x) + 0.5 ||x - v||^2``.

        ``t`` may be an array (entrywise kinds only), in which case entry j
        solves its own scalar subproblem with threshold ``t_j * weight``.
        """
        v = np.asarray(v, dtype=float)
        if self.kind == "zero":
            return v.copy()
        if self.kind == "indicator-nonneg":
            return project_nonneg(v)
        if not np.isscalar(t) and not self.entrywise:
            raise ValueError(f"{self.kind} prox needs a scalar threshold")
        tw = np.asarray(t, dtype=float) * self.weight
        if self.kind == "l1":
            return prox_l1(v, tw) if np.any(tw > 0) else v.copy()
        if self.kind == "l1-nonneg":
            return prox_l1_nonneg(v, tw) if np.any(tw > 0) else project_nonneg(v)
        if self.kind == "sq-frobenius":
            # min (tw/2) x^2 + (1/2)(x - v)^2  =>  x = v / (1 + tw)
            return v / (1.0 + tw)
        if self.kind == "nuclear":
            return prox_nuclear(v, float(tw)) if tw > 0 else v.copy()
        return prox_l21(v, float(tw)) if tw > 0 else v.copy()
