"""Independent reference computations used by the acceptance suite and the tests.

Each oracle takes a different route from the production code: finite
differences of the analytic callables instead of their Jacobians,
Christoffel symbols instead of the Koszul shortcut, full tuple enumeration
instead of combinations, dense matrix exponentials instead of stepping.
"""

from __future__ import annotations

import itertools

import numpy as np
import scipy.linalg as sla

# 6th-order central difference weights for offsets 1, 2, 3
_FD6 = (45.0 / 60.0, -9.0 / 60.0, 1.0 / 60.0)


def fd_derivative(fn, pts: np.ndarray, axis: int, step: float = 1e-3) -> np.ndarray:
    """``d fn / d x_axis`` at ``pts`` (P, 3); ``fn`` maps (x, y, z) to an array with trailing point axis."""
    out = 0.0
    for k, w in enumerate(_FD6, start=1):
        e = np.zeros(3)
        e[axis] = k * step
        plus = fn(*(pts + e).T)
        minus = fn(*(pts - e).T)
        out = out + w * (plus - minus)
    return out / step


def fd_jacobian(field_fn, pts):
    """``J[b, c] = d_c a^b`` with shape (3, 3, P)."""
    return np.stack([fd_derivative(field_fn, pts, c) for c in range(3)], axis=1)


def fd_bracket(a_fn, b_fn, pts):
    x, y, z = pts.T
    a, b = a_fn(x, y, z), b_fn(x, y, z)
    Ja, Jb = fd_jacobian(a_fn, pts), fd_jacobian(b_fn, pts)
    return np.einsum("cp,kcp->kp", a, Jb) - np.einsum("cp,kcp->kp", b, Ja)


def _g(frame, pts):
    return frame.metric(*pts.T)


def christoffel(frame, pts):
    """``Gamma^k_ij`` of the ambient metric from finite differences of ``g``; shape (3, 3, 3, P)."""
    g = _g(frame, pts)  # (3, 3, P)
    dg = np.stack([fd_derivative(frame.metric, pts, c) for c in range(3)], axis=0)  # (c, a, b, P)
    ginv = np.linalg.inv(g.transpose(2, 0, 1)).transpose(1, 2, 0)
    # Gamma_kij = 1/2 (d_i g_kj + d_j g_ki - d_k g_ij)
    low = 0.5 * (np.einsum("ikjp->kijp", dg) + np.einsum("jkip->kijp", dg) - dg)
    return np.einsum("lkp,kijp->lijp", ginv, low)


def covariant_derivative(frame, a_fn, b_fn, pts):
    """``nabla^R_A B`` of the ambient metric in coordinates."""
    x, y, z = pts.T
    a, b = a_fn(x, y, z), b_fn(x, y, z)
    Jb = fd_jacobian(b_fn, pts)
    G = christoffel(frame, pts)
    return np.einsum("cp,kcp->kp", a, Jb) + np.einsum("kijp,ip,jp->kp", G, a, b)


def oracle_zeta(frame, pts):
    """Horizontal components ``<sum_a nabla^R_{xi_a} xi_a, e_k>``, shape (m, P)."""
    g = _g(frame, pts)
    total = sum(covariant_derivative(frame, v.coeffs, v.coeffs, pts) for v in frame.vertical)
    x, y, z = pts.T
    return np.array([np.einsum("abp,ap,bp->p", g, total, e.coeffs(x, y, z)) for e in frame.horizontal])


def oracle_eta(frame, pts, v=None):
    """``eta(v) = sum_{i<j} <[e_i, e_j], v>_g^2`` with ``v`` the vertical frame combination (default ``xi_1``)."""
    g = _g(frame, pts)
    x, y, z = pts.T
    ver = np.array([f.coeffs(x, y, z) for f in frame.vertical])
    coeff = np.eye(len(frame.vertical))[0] if v is None else np.asarray(v, dtype=float)
    vv = np.einsum("a,akp->kp", coeff, ver)
    out = 0.0
    hs = frame.horizontal
    for i in range(len(hs)):
        for j in range(i + 1, len(hs)):
            br = fd_bracket(hs[i].coeffs, hs[j].coeffs, pts)
            out = out + np.einsum("abp,ap,bp->p", g, br, vv) ** 2
    return out


def nsw_bruteforce(frame, point):
    """All ``n^n`` ordered tuples of ``Y = (e_1..e_m, [e_i, e_j])``; returns {degree: sum a_I}."""
    pts = np.asarray(point, dtype=float).reshape(1, 3)
    x, y, z = pts.T
    hs = frame.horizontal
    Ys = [f.coeffs(x, y, z)[:, 0] for f in hs]
    degs = [1] * len(hs)
    for i in range(len(hs)):
        for j in range(i + 1, len(hs)):
            Ys.append(fd_bracket(hs[i].coeffs, hs[j].coeffs, pts)[:, 0])
            degs.append(2)
    vol = np.sqrt(np.linalg.det(frame.metric(x, y, z)[:, :, 0]))
    coeffs: dict[int, float] = {}
    for I in itertools.product(range(len(Ys)), repeat=3):
        a = abs(np.linalg.det(np.column_stack([Ys[i] for i in I]))) * vol
        d = sum(degs[i] for i in I)
        coeffs[d] = coeffs.get(d, 0.0) + a
    return coeffs


def dense_heat(op, t: float) -> np.ndarray:
    """``exp(t L)`` as a dense matrix."""
    return sla.expm(t * op.matrix.toarray())


def dense_implicit_heat(op, t: float, steps: int) -> np.ndarray:
    """``(I - dt L)^{-steps}`` as a dense matrix, ``dt = t / steps``."""
    A = np.eye(op.size) - (t / steps) * op.matrix.toarray()
    return np.linalg.matrix_power(np.linalg.inv(A), steps)


def fd_projection_derivatives(project_fn, y: np.ndarray, v: np.ndarray, w: np.ndarray, step: float = 1e-4):
    """First derivative ``Pi'(y) v`` and mixed second derivative ``Pi''(y)(v, w)`` by central differences."""
    d1 = (project_fn(y + step * v) - project_fn(y - step * v)) / (2 * step)
    d2 = (project_fn(y + step * (v + w)) - project_fn(y + step * (v - w))
          - project_fn(y - step * (v - w)) + project_fn(y - step * (v + w))) / (4 * step * step)
    return d1, d2


def midpoint_mean(fn, n: int = 4096):
    """Midpoint quadrature of ``fn`` over ``[0, 1)`` on a fine 1-D grid."""
    s = (np.arange(n) + 0.5) / n
    return float(np.mean(fn(s)))
