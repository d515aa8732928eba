"""Discretised step-2 sub-Riemannian model manifolds.

A fixture is a periodic grid on the unit coordinate cube together with an
adapted orthonormal frame ``{e_1, .., e_m, xi_1, .., xi_d}`` whose
coefficients are closed-form functions with closed-form derivatives. All
structural tensors (torsion of the Bott connection, mean curvature of the
vertical distribution, eta) are evaluated from those analytic derivatives.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError

TWO_PI = 2.0 * np.pi
BRACKET_TOL = 1e-8


class Wrap(str, enum.Enum):
    PLAIN = "PlainPeriodic"
    TWIST = "HeisenbergTwist"


@dataclass(frozen=True)
class GridSpec:
    """Periodic node lattice on ``[0, 1)^3`` with ``dims[a]`` nodes per axis.

    With ``Wrap.TWIST`` the x-faces are glued by the Heisenberg lattice
    action ``(x, y, z) ~ (x + 1, y, z + y)``; this needs ``h_y == h_z`` so
    the z-shift of a wrapped node is a whole number of cells.
    """

    dims: tuple[int, int, int]
    wrap: Wrap = Wrap.PLAIN

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or any(d <= 0 for d in dims):
            raise ConfigurationError(f"dims must be three positive integers, got {self.dims}")
        if any(d % 2 == 0 for d in dims):
            raise ConfigurationError(
                f"grid dims must all be odd (odd-dims invariant keeps the skew "
                f"difference kernel to constants), got {dims}"
            )
        if self.wrap is Wrap.TWIST and dims[1] != dims[2]:
            raise ConfigurationError("HeisenbergTwist wrap needs dims_y == dims_z")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "wrap", Wrap(self.wrap))

    @property
    def spacing(self) -> tuple[float, float, float]:
        return tuple(1.0 / d for d in self.dims)

    @property
    def size(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def cell_volume(self) -> float:
        hx, hy, hz = self.spacing
        return hx * hy * hz

    def index(self, i, j, k):
        nx, ny, nz = self.dims
        return (np.asarray(i) * ny + np.asarray(j)) * nz + np.asarray(k)

    def unravel(self, flat):
        return np.unravel_index(flat, self.dims)

    def coordinates(self):
        """Node coordinate arrays ``X, Y, Z`` of shape ``dims``."""
        axes = [np.arange(d) / d for d in self.dims]
        return np.meshgrid(*axes, indexing="ij")

    def points(self) -> np.ndarray:
        return np.stack([c.ravel() for c in self.coordinates()], axis=1)

    def shift(self, axis: int, offset: int) -> np.ndarray:
        """Flat index of the node reached from every node by ``offset`` cells along ``axis``."""
        nx, ny, nz = self.dims
        i, j, k = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
        ii, jj, kk = [a.ravel().copy() for a in (i, j, k)]
        if axis == 0:
            ii = ii + offset
            if self.wrap is Wrap.TWIST:
                kk = kk - np.floor_divide(ii, nx) * jj
        elif axis == 1:
            jj = jj + offset
        elif axis == 2:
            kk = kk + offset
        else:
            raise ConfigurationError(f"axis must be 0, 1 or 2, got {axis}")
        return self.index(ii % nx, jj % ny, kk % nz)

    def nearest_node(self, pts: np.ndarray) -> np.ndarray:
        """Flat index of the node nearest to each covering-space point ``pts[:, :3]``."""
        nx, ny, nz = self.dims
        ii = np.rint(pts[:, 0] * nx).astype(np.int64)
        jj = np.rint(pts[:, 1] * ny).astype(np.int64)
        kk = np.rint(pts[:, 2] * nz).astype(np.int64)
        return self.reduce_indices(ii, jj, kk)

    def reduce_indices(self, ii, jj, kk):
        """Map covering-space integer indices to flat node indices honouring the wrap."""
        nx, ny, nz = self.dims
        if self.wrap is Wrap.TWIST:
            kk = kk - np.floor_divide(ii, nx) * jj
        return self.index(np.mod(ii, nx), np.mod(jj, ny), np.mod(kk, nz))


@dataclass(frozen=True)
class VectorField:
    """Closed-form vector field ``a^x d_x + a^y d_y + a^z d_z``.

    ``coeffs(x, y, z)`` returns shape ``(3, *x.shape)``; ``jacobian`` returns
    ``J[b, c] = d a^b / d x^c`` with shape ``(3, 3, *x.shape)``.
    """

    name: str
    coeffs: Callable
    jacobian: Callable

    def divergence(self, x, y, z):
        jac = self.jacobian(x, y, z)
        return jac[0, 0] + jac[1, 1] + jac[2, 2]


@dataclass(frozen=True)
class FrameField:
    horizontal: tuple[VectorField, ...]
    vertical: tuple[VectorField, ...]
    metric: Callable  # g_ab in coordinates, shape (3, 3, *x.shape)

    @property
    def m(self) -> int:
        return len(self.horizontal)

    @property
    def d(self) -> int:
        return len(self.vertical)

    @property
    def fields(self) -> tuple[VectorField, ...]:
        return self.horizontal + self.vertical


@dataclass(frozen=True)
class SubRiemannianFixture:
    name: str
    grid: GridSpec
    frame: FrameField
    torsion: np.ndarray  # (d, m, m, N)
    zeta: np.ndarray  # (m, N)
    eta_min: float
    eta_field: np.ndarray  # (d, N): eta(xi_alpha) at every node
    foliation_flags: dict
    step2_claimed: bool = True
    samples: dict = field(default=None, repr=False, compare=False)

    @property
    def h3(self) -> float:
        return self.grid.cell_volume


# ---------------------------------------------------------------------------
# analytic frame sampling


def _const(value, shape):
    return np.full(shape, value, dtype=np.result_type(float, value))


def _vf(name, coeffs, jacobian):
    return VectorField(name=name, coeffs=coeffs, jacobian=jacobian)


def _stack3(*rows):
    return np.stack(np.broadcast_arrays(*rows))


def _zeros_like(x):
    return np.zeros_like(np.asarray(x, dtype=np.result_type(float, x)))


def contact_torus_frame() -> FrameField:
    def e1(x, y, z):
        return _stack3(np.cos(TWO_PI * z), -np.sin(TWO_PI * z), _zeros_like(z))

    def e1_jac(x, y, z):
        o = _zeros_like(z)
        return np.stack([
            _stack3(o, o, -TWO_PI * np.sin(TWO_PI * z)),
            _stack3(o, o, -TWO_PI * np.cos(TWO_PI * z)),
            _stack3(o, o, o),
        ])

    def e2(x, y, z):
        o = _zeros_like(z)
        return _stack3(o, o, o + 1.0)

    def xi(x, y, z):
        return _stack3(np.sin(TWO_PI * z), np.cos(TWO_PI * z), _zeros_like(z))

    def xi_jac(x, y, z):
        o = _zeros_like(z)
        return np.stack([
            _stack3(o, o, TWO_PI * np.cos(TWO_PI * z)),
            _stack3(o, o, -TWO_PI * np.sin(TWO_PI * z)),
            _stack3(o, o, o),
        ])

    return FrameField(
        horizontal=(_vf("e1", e1, e1_jac), _vf("e2", e2, _zero_jac)),
        vertical=(_vf("xi", xi, xi_jac),),
        metric=_flat_metric,
    )


def heisenberg_frame() -> FrameField:
    def e1(x, y, z):
        o = _zeros_like(x + y + z)
        return _stack3(o + 1.0, o, o)

    def e2(x, y, z):
        o = _zeros_like(x + y + z)
        return _stack3(o, o + 1.0, x + o)

    def e2_jac(x, y, z):
        o = _zeros_like(x + y + z)
        return np.stack([_stack3(o, o, o), _stack3(o, o, o), _stack3(o + 1.0, o, o)])

    def xi(x, y, z):
        o = _zeros_like(x + y + z)
        return _stack3(o, o, o + 1.0)

    def metric(x, y, z):
        # g = dx^2 + dy^2 + (dz - x dy)^2, the left-invariant extension
        o = _zeros_like(x + y + z)
        x = x + o
        return np.stack([
            _stack3(o + 1.0, o, o),
            _stack3(o, 1.0 + x * x, -x),
            _stack3(o, -x, o + 1.0),
        ])

    return FrameField(
        horizontal=(_vf("e1", e1, _zero_jac), _vf("e2", e2, e2_jac)),
        vertical=(_vf("xi", xi, _zero_jac),),
        metric=metric,
    )


def commuting_frame() -> FrameField:
    """Integrable control frame ``d_x, d_y | d_z``; never bracket generating."""

    def axis(a):
        def coeffs(x, y, z):
            o = _zeros_like(x + y + z)
            rows = [o, o, o]
            rows[a] = o + 1.0
            return _stack3(*rows)

        return coeffs

    return FrameField(
        horizontal=(_vf("e1", axis(0), _zero_jac), _vf("e2", axis(1), _zero_jac)),
        vertical=(_vf("xi", axis(2), _zero_jac),),
        metric=_flat_metric,
    )


def _zero_jac(x, y, z):
    o = _zeros_like(x + y + z)
    return np.zeros((3, 3) + o.shape, dtype=o.dtype)


def _flat_metric(x, y, z):
    o = _zeros_like(x + y + z)
    eye = np.eye(3).reshape(3, 3, *([1] * o.ndim))
    return eye + np.zeros((3, 3) + o.shape)


# ---------------------------------------------------------------------------
# structure tensors


def sample_frame(frame: FrameField, points: np.ndarray) -> dict:
    """Coefficients, Jacobians and metric of every frame field at ``points``."""
    x, y, z = points.T
    return {
        "horizontal": np.stack([f.coeffs(x, y, z) for f in frame.horizontal]),
        "horizontal_jac": np.stack([f.jacobian(x, y, z) for f in frame.horizontal]),
        "vertical": np.stack([f.coeffs(x, y, z) for f in frame.vertical]),
        "vertical_jac": np.stack([f.jacobian(x, y, z) for f in frame.vertical]),
        "metric": frame.metric(x, y, z),
    }


def bracket(a, a_jac, b, b_jac):
    """Lie bracket ``[A, B]^k = A^c d_c B^k - B^c d_c A^k`` of sampled fields."""
    return np.einsum("c...,kc...->k...", a, b_jac) - np.einsum("c...,kc...->k...", b, a_jac)


def inner(g, v, w):
    return np.einsum("ab...,a...,b...->...", g, v, w)


def _structure(s: dict):
    hor, hjac = s["horizontal"], s["horizontal_jac"]
    ver, vjac = s["vertical"], s["vertical_jac"]
    g = s["metric"]
    m, d = hor.shape[0], ver.shape[0]
    npts = hor.shape[-1]

    torsion = np.zeros((d, m, m, npts))
    for i in range(m):
        for j in range(i + 1, m):
            br = bracket(hor[i], hjac[i], hor[j], hjac[j])
            for a in range(d):
                t = -inner(g, br, ver[a])
                torsion[a, i, j] = t
                torsion[a, j, i] = -t

    # <nabla_xi xi, e_k> = <[e_k, xi], xi> for an orthonormal frame (Koszul)
    zeta = np.zeros((m, npts))
    for k in range(m):
        for a in range(d):
            br = bracket(hor[k], hjac[k], ver[a], vjac[a])
            zeta[k] += inner(g, br, ver[a])

    # eta(v) = sum_{i<j} <[e_i, e_j], v>^2 = v^T S v, S_ab = sum_{i<j} T^a_ij T^b_ij
    iu = np.triu_indices(m, 1)
    tpairs = torsion[:, iu[0], iu[1], :]  # (d, P, N)
    S = np.einsum("apn,bpn->nab", tpairs, tpairs)
    eta_field = np.einsum("naa->an", S)
    eta_node_min = np.linalg.eigvalsh(S)[:, 0] if d > 1 else S[:, 0, 0]
    return torsion, zeta, eta_field, eta_node_min


def make_fixture(name, grid: GridSpec, frame: FrameField, foliation_flags=None,
                 step2_claimed=True) -> SubRiemannianFixture:
    """Sample ``frame`` on ``grid`` and populate all derived tensors."""
    pts = grid.points()
    s = sample_frame(frame, pts)
    torsion, zeta, eta_field, eta_node_min = _structure(s)
    s["eta_node_min"] = eta_node_min
    s["points"] = pts
    return SubRiemannianFixture(
        name=name,
        grid=grid,
        frame=frame,
        torsion=torsion,
        zeta=zeta,
        eta_min=float(max(eta_node_min.min(), 0.0)),
        eta_field=eta_field,
        foliation_flags=dict(foliation_flags or {"is_riemannian_foliation": False, "is_tense": False}),
        step2_claimed=step2_claimed,
        samples=s,
    )


FIXTURE_KINDS = ("ContactTorus", "HeisenbergNilmanifold", "CommutingTorus")


def build_fixture(kind: str, n: int) -> SubRiemannianFixture:
    """Build one of the registered fixtures on an ``n^3`` grid (``n`` odd, ``n >= 5``)."""
    if kind not in FIXTURE_KINDS:
        raise ConfigurationError(
            f"unknown fixture {kind!r}; registry contains {', '.join(FIXTURE_KINDS)}"
        )
    if int(n) != n or n < 5 or n % 2 == 0:
        raise ConfigurationError(
            f"fixture size n={n} violates the odd-dims invariant (n must be odd and >= 5)"
        )
    n = int(n)
    if kind == "ContactTorus":
        return make_fixture(kind, GridSpec((n, n, n), Wrap.PLAIN), contact_torus_frame(),
                            {"is_riemannian_foliation": False, "is_tense": False})
    if kind == "HeisenbergNilmanifold":
        return make_fixture(kind, GridSpec((n, n, n), Wrap.TWIST), heisenberg_frame(),
                            {"is_riemannian_foliation": True, "is_tense": True})
    return make_fixture(kind, GridSpec((n, n, n), Wrap.PLAIN), commuting_frame(),
                        {"is_riemannian_foliation": True, "is_tense": True}, step2_claimed=False)


def torsion_and_eta(fixture: SubRiemannianFixture):
    """Recompute ``(torsion, eta_min, eta_field)`` from the analytic frame."""
    torsion, _, eta_field, eta_node_min = _structure(fixture.samples)
    return torsion, float(max(eta_node_min.min(), 0.0)), eta_field


def eta(fixture: SubRiemannianFixture, v: np.ndarray) -> np.ndarray:
    """``eta(v)`` at every node for vertical direction with frame components ``v`` (length d)."""
    v = np.asarray(v, dtype=float)
    t = np.einsum("a,aijn->ijn", v, fixture.torsion)
    return 0.5 * np.einsum("ijn,ijn->n", t, t)


def mean_curvature(fixture: SubRiemannianFixture) -> np.ndarray:
    """Horizontal frame components of ``zeta`` at every node, shape ``(m, N)``."""
    return _structure(fixture.samples)[1]


def horizontal_drift(fixture: SubRiemannianFixture) -> np.ndarray:
    """Frame components of ``sum_i nabla^B_{e_i} e_i + zeta`` (the first-order part of the sub-Laplacian)."""
    s = fixture.samples
    hor, hjac, g = s["horizontal"], s["horizontal_jac"], s["metric"]
    m = hor.shape[0]
    drift = mean_curvature(fixture).copy()
    for k in range(m):
        for i in range(m):
            if i != k:
                drift[k] += inner(g, bracket(hor[k], hjac[k], hor[i], hjac[i]), hor[i])
    return drift


def coordinate_divergence(fixture: SubRiemannianFixture) -> np.ndarray:
    """Coordinate divergence of each horizontal and vertical field, shape ``(m + d, N)``."""
    s = fixture.samples
    jac = np.concatenate([s["horizontal_jac"], s["vertical_jac"]])
    return np.einsum("fcc...->f...", jac)


def gram_deviation(fixture: SubRiemannianFixture) -> float:
    s = fixture.samples
    frame = np.concatenate([s["horizontal"], s["vertical"]])  # (m+d, 3, N)
    gram = np.einsum("abn,pan,qbn->pqn", s["metric"], frame, frame)
    eye = np.eye(frame.shape[0])[:, :, None]
    return float(np.abs(gram - eye).max())


@dataclass(frozen=True)
class BracketReport:
    step2: bool
    eta_min: float
    node: int


def verify_bracket_generating(fixture: SubRiemannianFixture) -> BracketReport:
    node_min = fixture.samples["eta_node_min"]
    node = int(np.argmin(node_min))
    eta_min = float(max(node_min[node], 0.0))
    return BracketReport(step2=eta_min > BRACKET_TOL, eta_min=eta_min, node=node)


def fixture_summary(fixture: SubRiemannianFixture) -> dict:
    return {
        "name": fixture.name,
        "dims": list(fixture.grid.dims),
        "wrap": fixture.grid.wrap.value,
        "eta_min": fixture.eta_min,
        "zeta_max_norm": float(np.abs(fixture.zeta).max()),
        "gram_deviation": gram_deviation(fixture),
        "step2": verify_bracket_generating(fixture).step2,
        "flags": dict(fixture.foliation_flags),
    }
