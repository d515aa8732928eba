"""Carnot-Caratheodory distances, ball volumes and the Nagel-Stein-Wainger polynomial.

Distances are shortest paths on a move graph. From every node we follow
``+-e_i`` for ``s * delta`` (``s = 1..substeps``), snap the endpoint to the
nearest node and charge the snap remainder with a steering cost: the
horizontal part at unit price and the vertical remainder ``r`` through a
closed loop of length ``sqrt(4 pi |r| / |kappa|)``. Every edge weight is
therefore the length of an admissible horizontal path (exactly so on the
Heisenberg group), so graph distances bound ``d_CC`` from above.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from .errors import ConnectivityError, RangeError
from .manifold import SubRiemannianFixture, bracket, inner

NSW_TOL = 1e-12
DEFAULT_WINDOW = (0.08, 0.25)


@dataclass
class HorizontalGraph:
    weights: sp.csr_matrix = field(repr=False)
    delta: float
    substeps: int
    rk_steps: int

    @property
    def edge_count(self) -> int:
        return self.weights.nnz


def _frame_at(fixture, pts):
    x, y, z = pts.T
    frame = fixture.frame
    hor = np.stack([f.coeffs(x, y, z) for f in frame.horizontal])
    hjac = np.stack([f.jacobian(x, y, z) for f in frame.horizontal])
    ver = np.stack([f.coeffs(x, y, z) for f in frame.vertical])
    return hor, hjac, ver, frame.metric(x, y, z)


def _flow(field_fn, pts, length, rk_steps):
    """RK4 integration of ``gamma' = field(gamma)`` for arc length ``length``."""
    h = length / rk_steps
    p = pts.copy()

    def f(q):
        return field_fn(q[:, 0], q[:, 1], q[:, 2]).T

    for _ in range(rk_steps):
        k1 = f(p)
        k2 = f(p + 0.5 * h * k1)
        k3 = f(p + 0.5 * h * k2)
        k4 = f(p + h * k3)
        p = p + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return p


def steering_cost(fixture, pts, disp):
    """Length of a horizontal path from ``pts`` realising displacement ``disp``.

    Only defined for horizontal rank 2 and vertical rank 1. Returns ``inf``
    where a vertical remainder cannot be steered (``kappa == 0``).
    """
    hor, hjac, ver, g = _frame_at(fixture, pts)
    F = np.concatenate([hor, ver]).transpose(2, 1, 0)  # (P, 3 coords, 3 fields)
    c = np.linalg.solve(F, disp[:, :, None])[:, :, 0]
    a = c[:, :2]
    # second-order drift of the straight horizontal move a1 e1 + a2 e2
    drift = 0.5 * sum(
        a[:, i] * a[:, j] * np.einsum("kcp,cp->kp", hjac[j], hor[i]) for i in range(2) for j in range(2)
    )
    drift_c = np.linalg.solve(F, drift.T[:, :, None])[:, :, 0]
    remainder = np.abs(c[:, 2] - drift_c[:, 2])
    kappa = np.abs(inner(g, bracket(hor[0], hjac[0], hor[1], hjac[1]), ver[0]))
    loop = np.full(len(pts), np.inf)
    ok = kappa > 1e-12
    loop[ok] = np.sqrt(4.0 * np.pi * remainder[ok] / kappa[ok])
    loop[remainder < 1e-14] = 0.0
    return np.linalg.norm(a, axis=1) + loop


def build_horizontal_graph(fixture: SubRiemannianFixture, delta: float | None = None,
                           substeps: int = 2, rk_steps: int = 4) -> HorizontalGraph:
    """Symmetrised move graph with at most ``4 * substeps`` edges per node."""
    grid = fixture.grid
    if delta is None:
        delta = 0.5 * min(grid.spacing)
    if delta <= 0 or substeps < 1:
        raise RangeError("graph resolution parameters must be positive")
    pts = fixture.samples["points"]
    N = grid.size
    src_all, dst_all, w_all = [], [], []
    for f in fixture.frame.horizontal:
        for sign in (1.0, -1.0):
            fn = (lambda x, y, z, f=f, s=sign: s * f.coeffs(x, y, z))
            for s in range(1, substeps + 1):
                end = _flow(fn, pts, s * delta, rk_steps * s)
                idx = np.rint(end * np.array(grid.dims)).astype(np.int64)
                snapped = idx / np.array(grid.dims)
                dst = grid.reduce_indices(idx[:, 0], idx[:, 1], idx[:, 2])
                w = s * delta + steering_cost(fixture, end, snapped - end)
                keep = (dst != np.arange(N)) & np.isfinite(w)
                src_all.append(np.arange(N)[keep])
                dst_all.append(dst[keep])
                w_all.append(w[keep])
    src = np.concatenate(src_all + dst_all)
    dst = np.concatenate(dst_all + src_all)
    w = np.concatenate(w_all + w_all)
    # keep the cheapest of parallel edges (either direction) between a node pair
    order = np.lexsort((w, dst, src))
    src, dst, w = src[order], dst[order], w[order]
    first = np.ones(len(src), dtype=bool)
    first[1:] = (src[1:] != src[:-1]) | (dst[1:] != dst[:-1])
    W = sp.csr_matrix((w[first], (src[first], dst[first])), shape=(N, N))
    return HorizontalGraph(W, float(delta), int(substeps), int(rk_steps))


def cc_distance_field(fixture: SubRiemannianFixture, source: int = 0, delta: float | None = None,
                      substeps: int = 2, graph: HorizontalGraph | None = None) -> np.ndarray:
    """Graph approximation (from above) of ``d_CC(source, .)`` at every node."""
    if graph is None:
        graph = build_horizontal_graph(fixture, delta, substeps)
    dist = dijkstra(graph.weights, directed=True, indices=int(source))
    if not np.all(np.isfinite(dist)):
        missing = int(np.count_nonzero(~np.isfinite(dist)))
        raise ConnectivityError(
            f"{missing} nodes unreachable from node {source}: horizontal graph too coarse "
            f"(delta={graph.delta}, substeps={graph.substeps}) to witness Chow connectivity"
        )
    return dist


@dataclass
class VolumeProfile:
    radii: np.ndarray
    volumes: np.ndarray
    slope: float
    window: tuple
    doubling: list  # (r, vol(2r)/vol(r))


def volume_profile_and_exponent(distances: np.ndarray, radii, cell_volume: float,
                                window=DEFAULT_WINDOW) -> VolumeProfile:
    """Ball volumes ``vol(r) = #{d < r} h^3`` and the log-log growth exponent on ``window``."""
    radii = np.asarray(radii, dtype=float)
    vols = np.array([np.count_nonzero(distances < r) for r in radii], dtype=float) * cell_volume
    total = distances.size * cell_volume
    sel = (radii >= window[0]) & (radii <= window[1])
    if np.count_nonzero(sel) < 2:
        raise RangeError(f"fit window {window} contains fewer than two radii")
    if np.any(vols[sel] >= total * (1 - 1e-12)):
        raise RangeError("balls in the fit window are saturated (wrap-around)")
    slope = float(np.polyfit(np.log(radii[sel]), np.log(vols[sel]), 1)[0])
    doubling = []
    for r in radii[sel]:
        if 2 * r <= radii.max() + 1e-12:
            v1 = np.count_nonzero(distances < r)
            v2 = np.count_nonzero(distances < 2 * r)
            if v1:
                doubling.append((float(r), v2 / v1))
    return VolumeProfile(radii, vols, slope, tuple(window), doubling)


@dataclass
class NSWData:
    fields: list  # names of Y_1..Y_q
    degrees: list
    coefficients: dict  # degree -> sum of a_I
    a: dict  # sorted index tuple -> a_I for one representative ordering
    q_pointwise: int | None
    q_local: int | None
    bracket_generating: bool

    def polynomial(self, r):
        r = np.asarray(r, dtype=float)
        return sum(c * r**deg for deg, c in self.coefficients.items())


def commutator_fields(fixture: SubRiemannianFixture, node: int):
    """``Y_1..Y_q = e_1..e_m, [e_i, e_j] (i < j)`` at ``node`` with their degrees."""
    s = fixture.samples
    hor, hjac = s["horizontal"][:, :, node], s["horizontal_jac"][:, :, :, node]
    m = hor.shape[0]
    Ys, degs, names = list(hor), [1] * m, [f"e{i + 1}" for i in range(m)]
    for i in range(m):
        for j in range(i + 1, m):
            Ys.append(bracket(hor[i], hjac[i], hor[j], hjac[j]))
            degs.append(2)
            names.append(f"[e{i + 1},e{j + 1}]")
    return np.array(Ys), degs, names


def _wedge_norm(vectors, metric):
    # |Y1 ^ .. ^ Yn|_g = |det[Y]| sqrt(det g)
    return abs(np.linalg.det(np.column_stack(vectors))) * math.sqrt(np.linalg.det(metric))


def nsw_polynomial(fixture: SubRiemannianFixture, node: int = 0, sample_nodes=None) -> NSWData:
    """Nagel-Stein-Wainger data for the step-2 commutator list at ``node``.

    Tuples with a repeated field have zero wedge, and permuting a tuple only
    flips the determinant's sign, so each index set is evaluated once and
    weighted by the number of its orderings.
    """
    dim = fixture.frame.m + fixture.frame.d
    metric = fixture.samples["metric"][:, :, node]
    Ys, degs, names = commutator_fields(fixture, node)
    coeffs: dict[int, float] = {}
    a: dict[tuple, float] = {}
    spanning = []
    for combo in itertools.combinations(range(len(Ys)), dim):
        val = _wedge_norm([Ys[i] for i in combo], metric)
        a[combo] = val
        deg = sum(degs[i] for i in combo)
        coeffs[deg] = coeffs.get(deg, 0.0) + math.factorial(dim) * val
        if val > NSW_TOL:
            spanning.append(deg)
    q_point = min(spanning) if spanning else None

    nodes = range(fixture.grid.size) if sample_nodes is None else sample_nodes
    q_local = None
    for nd in nodes:
        Y2, d2, _ = commutator_fields(fixture, nd)
        g2 = fixture.samples["metric"][:, :, nd]
        for combo in itertools.combinations(range(len(Y2)), dim):
            if _wedge_norm([Y2[i] for i in combo], g2) > NSW_TOL:
                deg = sum(d2[i] for i in combo)
                q_local = deg if q_local is None else max(q_local, deg)
    return NSWData(names, degs, {k: v for k, v in sorted(coeffs.items())}, a, q_point, q_local,
                   bracket_generating=q_point is not None)
