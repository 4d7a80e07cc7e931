"""Independent reference implementations used only by the tests."""

import math

import numpy as np
from scipy.spatial.transform import Rotation


def secant_envelope(x, y):
    """Convex envelope at the sample points by brute force over all secants.

    ``fc(x_k) = min(y_k, min_{i < k < j} secant_{ij}(x_k))``; O(M^2) pairs.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = y.copy()
    i, j = np.triu_indices(len(x), k=1)
    for k in range(len(x)):
        m = (i < k) & (j > k)
        if not np.any(m):
            continue
        a, b = i[m], j[m]
        s = (x[k] - x[a]) / (x[b] - x[a])
        out[k] = min(out[k], float(np.min((1 - s) * y[a] + s * y[b])))
    return out


def _matrices(xi, params):
    """Matrices with first column ``xi`` and unit determinant from 5 alternative coordinates.

    ``F = Q [[r, a, b], [0, G]]`` with ``Q e1 = xi/r`` and
    ``G = rot(t1) diag(rho, 1/(r rho)) rot(t2)``.
    """
    r = np.linalg.norm(xi)
    xh = xi / r
    # rotation taking e1 to xh
    v = np.cross([1.0, 0.0, 0.0], xh)
    s = np.linalg.norm(v)
    if s < 1e-14:
        Q = np.eye(3) if xh[0] > 0 else np.diag([-1.0, -1.0, 1.0])
    else:
        Q = Rotation.from_rotvec(v / s * math.atan2(s, xh[0])).as_matrix()
    a, b, t1, lr, t2 = (params[:, i] for i in range(5))
    rho = np.exp(lr)
    c1, s1, c2, s2 = np.cos(t1), np.sin(t1), np.cos(t2), np.sin(t2)
    d1, d2 = rho, 1.0 / (r * rho)
    G = np.empty((len(params), 2, 2))
    G[:, 0, 0] = c1 * d1 * c2 - s1 * d2 * s2
    G[:, 0, 1] = -c1 * d1 * s2 - s1 * d2 * c2
    G[:, 1, 0] = s1 * d1 * c2 + c1 * d2 * s2
    G[:, 1, 1] = -s1 * d1 * s2 + c1 * d2 * c2
    M = np.zeros((len(params), 3, 3))
    M[:, 0, 0] = r
    M[:, 0, 1] = a
    M[:, 0, 2] = b
    M[:, 1:, 1:] = G
    return Q @ M


def brute_force_reduced(w0, xi, coarse=9, zoom=5, rounds=40, keep=3):
    """Grid search for ``min W0((xi|A))`` over ``det(xi|A) = 1``.

    A coarse grid over ``[-3,3]^2 x [0,pi) x [-3,3] x [0,pi)`` is followed by
    repeated zooms around the best few points.
    """
    xi = np.asarray(xi, dtype=float)
    lo = np.array([-3.0, -3.0, 0.0, -3.0, 0.0])
    hi = np.array([3.0, 3.0, math.pi, 3.0, math.pi])
    axes = [np.linspace(lo[i], hi[i], coarse) for i in range(5)]
    P = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 5)
    vals = w0(_matrices(xi, P))
    order = np.argsort(vals)[:keep]
    centers = P[order]
    width = (hi - lo) / (coarse - 1)
    best = float(vals[order[0]])
    offs = np.stack(np.meshgrid(*[np.linspace(-1, 1, zoom)] * 5, indexing="ij"), axis=-1).reshape(-1, 5)
    for _ in range(rounds):
        new_c = []
        for c in centers:
            Pz = c + offs * width
            v = w0(_matrices(xi, Pz))
            i = int(np.argmin(v))
            new_c.append((float(v[i]), Pz[i]))
        new_c.sort(key=lambda t: t[0])
        best = min(best, new_c[0][0])
        centers = [p for _, p in new_c]
        width = width * 0.6
    return best


def affine_phi(c0, c1, x3):
    """Solution of ``int_0^phi (c0 + c1 s) ds = x3`` on the branch through 0."""
    c0, c1, x3 = np.broadcast_arrays(np.asarray(c0, float), np.asarray(c1, float), np.asarray(x3, float))
    out = np.empty_like(x3)
    small = np.abs(c1) < 1e-300
    out[small] = x3[small] / c0[small]
    big = ~small
    disc = c0[big] ** 2 + 2.0 * c1[big] * x3[big]
    # numerically stable root of c1/2 phi^2 + c0 phi - x3 = 0
    out[big] = 2.0 * x3[big] / (c0[big] + np.sqrt(disc))
    return out


def central_difference(f, x, h, axis):
    dx = np.zeros(3)
    dx[axis] = h
    return (f(x + dx) - f(x - dx)) / (2 * h)
