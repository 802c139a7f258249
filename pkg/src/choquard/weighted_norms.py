"""Weighted sup-norms adapted to the concentration points.

``|u|_* = sup lam^{-1} |u| / sum_j (1 + lam |x - xi_j|)^{-(1+tau)}`` and
``|h|_** = sup lam^{-3} |h| / sum_j (1 + lam |x - xi_j|)^{-(3+tau)}``. The
supremum is taken over a deterministic point cloud that is graded near the
centres and invariant under the polygon group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .bubble_core import DIM, PolygonAnsatz, _points, _sqnorm, group_images
from .exceptions import ContractError, NormError

__all__ = ["NormWeights", "norm_weights", "star_norm", "starstar_norm", "weight_function"]

_BASE_DIRECTIONS = None


def _base_directions() -> np.ndarray:
    """Axis, edge and vertex directions of the 4-cube (48 unit vectors)."""
    global _BASE_DIRECTIONS
    if _BASE_DIRECTIONS is None:
        d = []
        eye = np.eye(DIM)
        for i in range(DIM):
            d += [eye[i], -eye[i]]
        for i in range(DIM):
            for j in range(i + 1, DIM):
                for a in (1, -1):
                    for b in (1, -1):
                        d.append((a * eye[i] + b * eye[j]) / math.sqrt(2.0))
        for signs in np.ndindex(2, 2, 2, 2):
            d.append((1.0 - 2.0 * np.array(signs)) / 2.0)
        _BASE_DIRECTIONS = np.array(d)
    return _BASE_DIRECTIONS


def _directions(level: int) -> np.ndarray:
    """Base directions plus a prefix of an unscrambled Sobol sequence on S^3.

    Prefixes are nested, so a higher level is a superset of a lower one.
    """
    u = qmc.Sobol(DIM, scramble=False).random_base2(5 + level)
    g = ndtri(np.clip(u, 1e-12, 1.0 - 1e-12))
    nrm = np.linalg.norm(g, axis=1)
    g = g[nrm > 1e-6] / nrm[nrm > 1e-6, None]
    return np.vstack([_base_directions(), g])


def _dyadic(lo: float, hi: float, level: int) -> np.ndarray:
    """``2^{j / 2^level}`` in ``[lo, hi]``; nested in ``level``."""
    m = 2**level
    j0 = math.floor(math.log2(lo) * m)
    j1 = math.ceil(math.log2(hi) * m)
    v = 2.0 ** (np.arange(j0, j1 + 1) / m)
    return v[(v >= lo * (1 - 1e-12)) & (v <= hi * (1 + 1e-12))]


@dataclass(frozen=True)
class NormWeights:
    """Sample cloud and weight parameters for the two norms.

    Attributes
    ----------
    tau : float
    lam : float
    centers : ndarray, shape (k, 4)
    trunc : float
        Outer radius of the cloud (the domain truncation).
    level : int
        Sampling density; ``refine()`` increments it and returns a superset.
    """

    tau: float
    lam: float
    centers: np.ndarray
    trunc: float = 100.0
    level: int = 0
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not (0.0 < self.tau < 1.0):
            raise ContractError(f"tau must lie in (0, 1), got {self.tau}")
        object.__setattr__(self, "centers", np.atleast_2d(np.asarray(self.centers, dtype=float)))

    @property
    def k(self) -> int:
        return len(self.centers)

    def refine(self) -> "NormWeights":
        return NormWeights(self.tau, self.lam, self.centers, self.trunc, self.level + 1)

    @property
    def sample_set(self) -> np.ndarray:
        """Points of the cloud, shape ``(n, 4)``, invariant under the polygon group."""
        if "pts" not in self._cache:
            self._cache["pts"] = self._build()
        return self._cache["pts"]

    def _build(self) -> np.ndarray:
        lam, lvl = self.lam, self.level
        dirs = _directions(lvl)
        xi = self.centers[0]
        pts = [self.centers]
        # graded shells around xi_1 in units of 1/lam
        s = _dyadic(2.0**-3, max(2.0 * lam, 1.0), lvl)
        s = np.concatenate([[0.5, 1.0, 2.0, 4.0, 8.0], s])
        local = xi[None, None, :] + (s / lam)[:, None, None] * dirs[None, :, :]
        # global shells around the origin
        r = _dyadic(2.0 / self.trunc, self.trunc, lvl)
        far = r[:, None, None] * dirs[None, :, :]
        cloud = np.concatenate([local.reshape(-1, DIM), far.reshape(-1, DIM)])
        if self.k > 1 or np.any(xi != 0):
            cloud = group_images(cloud, max(self.k, 1)).reshape(-1, DIM)
        pts.append(cloud)
        x = np.concatenate(pts)
        rr = np.sqrt(_sqnorm(x))
        keep = (rr <= self.trunc) & (rr >= 1.5 / self.trunc)
        keep |= np.any(np.all(np.isclose(x[:, None, :], self.centers[None]), axis=-1), axis=1)
        return np.unique(x[keep], axis=0)

    def weight(self, x, exponent: float) -> np.ndarray:
        return weight_function(x, self.lam, self.centers, exponent)


def weight_function(x, lam: float, centers, exponent: float) -> np.ndarray:
    """``sum_j (1 + lam |x - xi_j|)^{-exponent}``."""
    x = _points(x)
    out = np.zeros(x.shape[:-1])
    for c in np.atleast_2d(centers):
        out += (1.0 + lam * np.sqrt(_sqnorm(x - c))) ** (-exponent)
    return out


def norm_weights(a: PolygonAnsatz, tau: float | None = None, level: int = 0) -> NormWeights:
    """Norm weights for an ansatz, defaulting ``tau`` and the cloud radius to its parameters."""
    tau = a.params.tau if tau is None else tau
    return NormWeights(tau, a.lam, a.centers, a.params.trunc_radius, level)


def _weighted_sup(u, w: NormWeights, exponent: float, power: float) -> float:
    x = w.sample_set
    vals = np.asarray(u(x), dtype=float) if callable(u) else np.broadcast_to(float(u), len(x))
    bad = ~np.isfinite(vals)
    if bad.any():
        i = int(np.argmax(bad))
        raise NormError(f"non-finite field value {vals[i]} at {x[i]}", location=x[i])
    ratio = np.abs(vals) / w.weight(x, exponent)
    return float(np.max(ratio)) / w.lam**power


def star_norm(u, w: NormWeights) -> float:
    """``|u|_*`` estimated on the sample cloud.

    Raises
    ------
    NormError
        If ``u`` is non-finite at a sample point (the point is attached).
    """
    return _weighted_sup(u, w, 1.0 + w.tau, 1.0)


def starstar_norm(h, w: NormWeights) -> float:
    """``|h|_**`` estimated on the sample cloud."""
    return _weighted_sup(h, w, 3.0 + w.tau, 3.0)


def argmax_point(u, w: NormWeights, which: str = "star") -> np.ndarray:
    """Sample point attaining the discrete supremum."""
    x = w.sample_set
    e = 1.0 + w.tau if which == "star" else 3.0 + w.tau
    return x[int(np.argmax(np.abs(u(x)) / w.weight(x, e)))]
