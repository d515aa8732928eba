"""Embedded targets ``N`` in ``R^K``: unit circle, flat torus ``S^1 x S^1`` and the round 2-sphere.

Each target is a product of unit spheres (blocks of ambient coordinates),
so the nearest-point projection is blockwise normalisation and all of its
derivatives are available in closed form.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import AliasingError, ConfigurationError, DomainError, TubeExitError
from .manifold import GridSpec

ON_MANIFOLD_TOL = 1e-10


class CurvatureClass(str, enum.Enum):
    NONPOSITIVE = "NonPositive"
    POSITIVE = "Positive"


@dataclass(frozen=True)
class TargetManifold:
    kind: str
    blocks: tuple  # ambient slices, one unit sphere each
    r_tube: float
    curvature_class: CurvatureClass

    @property
    def K(self) -> int:
        return self.blocks[-1].stop

    @property
    def circle_factors(self) -> int:
        """Number of ``S^1`` factors that carry a winding number."""
        return sum(1 for b in self.blocks if b.stop - b.start == 2)


TARGET_KINDS = ("Circle", "FlatTorus2", "Sphere2")


def build_target(kind: str, r_tube: float = 0.9) -> TargetManifold:
    if kind == "Circle":
        return TargetManifold(kind, (slice(0, 2),), r_tube, CurvatureClass.NONPOSITIVE)
    if kind == "FlatTorus2":
        return TargetManifold(kind, (slice(0, 2), slice(2, 4)), r_tube, CurvatureClass.NONPOSITIVE)
    if kind == "Sphere2":
        return TargetManifold(kind, (slice(0, 3),), r_tube, CurvatureClass.POSITIVE)
    raise ConfigurationError(f"unknown target {kind!r}; registry: {', '.join(TARGET_KINDS)}")


def _block_norms(target, y):
    return np.stack([np.linalg.norm(y[..., b], axis=-1) for b in target.blocks], axis=-1)


def normal_distance(target: TargetManifold, y: np.ndarray) -> np.ndarray:
    """Per-block distance ``| |y_b| - 1 |`` to the unit sphere of that block."""
    return np.abs(_block_norms(target, np.asarray(y, dtype=float)) - 1.0)


def in_tube(target: TargetManifold, y: np.ndarray) -> np.ndarray:
    """Inside the region where ``Pi`` is smooth.

    The only singularity of blockwise normalisation is the centre of each
    factor, so the guard is one-sided: every block norm must exceed
    ``1 - r_tube``. Points further out project fine at any distance.
    """
    return np.all(_block_norms(target, np.asarray(y, dtype=float)) > 1.0 - target.r_tube, axis=-1)


def _check_tube(target, y):
    inside = in_tube(target, y)
    if not np.all(inside):
        bad = np.flatnonzero(~np.atleast_1d(inside))
        node = int(bad[0]) if np.ndim(inside) else None
        raise TubeExitError(
            f"{target.kind}: point within {1.0 - target.r_tube:.3g} of a factor centre (tube radius {target.r_tube})"
            + (f" at node {node} ({bad.size} nodes affected)" if node is not None else ""),
            node=node,
        )


def project(target: TargetManifold, y: np.ndarray) -> np.ndarray:
    """Nearest point on ``N``; ``y`` may be a single point or an (N, K) field."""
    y = np.asarray(y, dtype=float)
    _check_tube(target, y)
    out = np.empty_like(y)
    for b in target.blocks:
        yb = y[..., b]
        out[..., b] = yb / np.linalg.norm(yb, axis=-1, keepdims=True)
    return out


def residual(target: TargetManifold, y: np.ndarray) -> np.ndarray:
    """``rho(y) = y - Pi(y)``."""
    return np.asarray(y, dtype=float) - project(target, y)


def on_manifold(target: TargetManifold, y: np.ndarray, tol: float = ON_MANIFOLD_TOL) -> bool:
    return bool(np.all(np.abs(_block_norms(target, np.asarray(y, dtype=float)) - 1.0) <= tol))


def projection_jacobian(target: TargetManifold, y: np.ndarray) -> np.ndarray:
    """``Pi^a_b`` at ``y`` (inside the tube); shape (..., K, K)."""
    y = np.asarray(y, dtype=float)
    _check_tube(target, y)
    J = np.zeros(y.shape + (y.shape[-1],))
    for b in target.blocks:
        yb = y[..., b]
        r = np.linalg.norm(yb, axis=-1)[..., None, None]
        p = yb / r[..., 0]
        k = b.stop - b.start
        J[..., b, b] = (np.eye(k) - p[..., :, None] * p[..., None, :]) / r
    return J


def hessian_contraction(target: TargetManifold, y: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``Pi^a_bc(y) v^b w^c`` at any tube point ``y``."""
    y, v, w = (np.asarray(a, dtype=float) for a in (y, v, w))
    _check_tube(target, y)
    out = np.zeros(np.broadcast_shapes(y.shape, v.shape, w.shape))
    for b in target.blocks:
        yb, vb, wb = y[..., b], v[..., b], w[..., b]
        r = np.linalg.norm(yb, axis=-1, keepdims=True)
        p = yb / r
        pv = np.sum(p * vb, axis=-1, keepdims=True)
        pw = np.sum(p * wb, axis=-1, keepdims=True)
        vw = np.sum(vb * wb, axis=-1, keepdims=True)
        out[..., b] = (-pw * vb - pv * wb - vw * p + 3.0 * pv * pw * p) / r**2
    return out


def second_fundamental_contraction(target: TargetManifold, p: np.ndarray, v: np.ndarray,
                                   w: np.ndarray, tol: float = ON_MANIFOLD_TOL) -> np.ndarray:
    """``Pi''_p(v, w)`` for ``p`` on ``N``."""
    if not on_manifold(target, p, tol):
        raise DomainError(f"{target.kind}: point is not on the target (tolerance {tol})")
    return hessian_contraction(target, p, v, w)


def tube_defect(target: TargetManifold, u: np.ndarray, cell_volume: float) -> float:
    """``sum |rho(u)|^2 h^3``."""
    r = residual(target, u)
    return float(np.sum(r * r) * cell_volume)


def angles(target: TargetManifold, u: np.ndarray) -> np.ndarray:
    """Angle of each circle block, shape (..., circle_factors)."""
    cols = [np.arctan2(u[..., b.start + 1], u[..., b.start]) for b in target.blocks if b.stop - b.start == 2]
    return np.stack(cols, axis=-1)


def from_angles(target: TargetManifold, theta: np.ndarray) -> np.ndarray:
    if target.circle_factors != len(target.blocks):
        raise ConfigurationError(f"{target.kind} is not a product of circles")
    theta = np.asarray(theta, dtype=float)
    theta = theta[..., None] if theta.ndim == 1 else theta
    parts = []
    for c in range(theta.shape[-1]):
        parts += [np.cos(theta[..., c]), np.sin(theta[..., c])]
    return np.stack(parts, axis=-1)


def wrap_angle(a):
    """Representative of ``a`` in ``[-pi, pi)``."""
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


def geodesic_distance(target: TargetManifold, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    if target.kind == "Sphere2":
        return np.arccos(np.clip(np.sum(p * q, axis=-1), -1.0, 1.0))
    # atan2 of (cross, dot) per circle factor
    d2 = 0.0
    for b in target.blocks:
        pb, qb = p[..., b], q[..., b]
        cross = pb[..., 0] * qb[..., 1] - pb[..., 1] * qb[..., 0]
        dot = np.sum(pb * qb, axis=-1)
        d2 = d2 + np.arctan2(cross, dot) ** 2
    return np.sqrt(d2)


def _increments(theta, grid: GridSpec, axis: int):
    """Wrapped angle increments from each node to its +axis neighbour."""
    return wrap_angle(theta[grid.shift(axis, 1)] - theta)


def winding_numbers(target: TargetManifold, u: np.ndarray, grid: GridSpec) -> tuple:
    """Integer windings along the x, y and z loops through node 0, per circle factor.

    On the Heisenberg quotient the z-loop is a commutator in the fundamental
    group, so its winding is always 0 for a continuous map.
    """
    if target.circle_factors == 0:
        return ()
    theta = angles(target, u)
    out = []
    for c in range(theta.shape[-1]):
        th = theta[:, c]
        incs = [_increments(th, grid, ax) for ax in range(3)]
        worst = max(float(np.max(np.abs(i))) for i in incs)
        if worst >= np.pi - 1e-9:
            raise AliasingError(f"adjacent-node angle jump {worst:.3f} >= pi; grid too coarse for this map")
        for ax in range(3):
            node, total = 0, 0.0
            nxt = grid.shift(ax, 1)
            for _ in range(grid.dims[ax]):
                total += incs[ax][node]
                node = nxt[node]
            out.append(int(np.rint(total / (2.0 * np.pi))))
    return tuple(out)
