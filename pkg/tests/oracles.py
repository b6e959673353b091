"""Independent reference computations used by the tests."""

import math

import numpy as np

from meshguard.quality import tet_solid_angles_batch, triangle_angles_batch


def central_difference(f, x, h=1e-6):
    """Central finite-difference gradient of the vector function ``f`` at ``x``.

    Returns an array of shape ``f(x).shape + x.shape``.
    """
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x))
    out = np.empty(f0.shape + x.shape)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        out[(...,) + idx] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h)
    return out


def simplex_angle_fd(p, h=1e-6):
    """FD derivative of every angle of simplex ``p`` (shape ``(d+1, d)``) w.r.t. every vertex."""
    batch = triangle_angles_batch if p.shape[1] == 2 else tet_solid_angles_batch
    return central_difference(lambda q: batch(q[None])[0], p, h)


def solid_angle_vos(p, i):
    """Van Oosterom-Strackee solid angle at vertex ``i`` of tetrahedron ``p``."""
    a, b, c = (p[j] - p[i] for j in range(4) if j != i)
    la, lb, lc = (np.linalg.norm(v) for v in (a, b, c))
    num = abs(np.dot(a, np.cross(b, c)))
    den = la * lb * lc + np.dot(a, b) * lc + np.dot(a, c) * lb + np.dot(b, c) * la
    omega = 2.0 * math.atan2(num, den)
    return omega if omega >= 0 else omega + 2 * math.pi


def random_rotation(rng, dim):
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def relative_error(approx, exact):
    approx, exact = np.asarray(approx), np.asarray(exact)
    return float(np.linalg.norm(approx - exact) / max(np.linalg.norm(exact), 1e-300))
