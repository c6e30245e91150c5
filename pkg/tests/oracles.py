"""Independent reference implementations used only by the tests."""

import math

import numpy as np


def legendre_recurrence(l, m, x):
    """P_l^m(x) without the Condon-Shortley phase, by the standard three-term recurrence."""
    pmm = 1.0
    if m > 0:
        s = math.sqrt((1.0 - x) * (1.0 + x))
        fact = 1.0
        for _ in range(m):
            pmm *= fact * s
            fact += 2.0
    if l == m:
        return pmm
    pmmp1 = x * (2 * m + 1) * pmm
    if l == m + 1:
        return pmmp1
    pll = 0.0
    for ll in range(m + 2, l + 1):
        pll = (x * (2 * ll - 1) * pmmp1 - (ll + m - 1) * pmm) / (ll - m)
        pmm, pmmp1 = pmmp1, pll
    return pll


def real_sh(l, m, theta, phi):
    am = abs(m)
    norm = math.sqrt((2 * l + 1) / (4 * math.pi) * math.factorial(l - am) / math.factorial(l + am))
    p = legendre_recurrence(l, am, math.cos(theta))
    if m == 0:
        return norm * p
    if m > 0:
        return math.sqrt(2) * norm * p * math.cos(am * phi)
    return math.sqrt(2) * norm * p * math.sin(am * phi)


def radius_sum(coeffs, theta, phi):
    return math.exp(sum(c * real_sh(l, m, theta, phi) for (l, m), c in coeffs.items()))


def ray_hits_triangle(o, d, a, b, c):
    """Ray o + t d, t > 0, against triangle abc by solving the 3x3 barycentric system."""
    A = np.column_stack([b - a, c - a, -d])
    if abs(np.linalg.det(A)) < 1e-14:
        return False
    u, v, t = np.linalg.solve(A, o - a)
    return u >= 0 and v >= 0 and u + v <= 1 and t > 0


def brute_force_visibility(vertices, facets, omega, omega0, eps):
    """O(F^2) facing + occlusion test at every facet centroid."""
    flags = []
    tri = vertices[facets]
    for i, (a, b, c) in enumerate(tri):
        n = np.cross(b - a, c - a)
        n = n / np.linalg.norm(n)
        if n @ omega <= 0 or n @ omega0 <= 0:
            flags.append(False)
            continue
        o = (a + b + c) / 3 + eps * n
        blocked = False
        for d in (omega, omega0):
            for j, (p, q, r) in enumerate(tri):
                if j != i and ray_hits_triangle(o, d, p, q, r):
                    blocked = True
                    break
            if blocked:
                break
        flags.append(not blocked)
    return np.array(flags)


def box_mesh(lo, hi, k):
    """Closed axis-aligned box, each face split into k x k squares (2 triangles each)."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    verts, faces = [], []
    index = {}

    def vid(p):
        key = tuple(np.round(p, 12))
        if key not in index:
            index[key] = len(verts)
            verts.append(np.array(p, float))
        return index[key]

    for axis in range(3):
        for side in (0, 1):
            u_ax, v_ax = [a for a in range(3) if a != axis]
            for i in range(k):
                for j in range(k):
                    pts = []
                    for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        p = np.empty(3)
                        p[axis] = hi[axis] if side else lo[axis]
                        p[u_ax] = lo[u_ax] + (hi[u_ax] - lo[u_ax]) * (i + di) / k
                        p[v_ax] = lo[v_ax] + (hi[v_ax] - lo[v_ax]) * (j + dj) / k
                        pts.append(vid(p))
                    q = [pts[0], pts[1], pts[2], pts[3]]
                    t1, t2 = (q[0], q[1], q[2]), (q[0], q[2], q[3])
                    # orient outward
                    P = np.array(verts)
                    nrm = np.cross(P[t1[1]] - P[t1[0]], P[t1[2]] - P[t1[0]])
                    outward = (1 if side else -1)
                    if np.sign(nrm[axis]) != outward:
                        t1, t2 = t1[::-1], t2[::-1]
                    faces += [t1, t2]
    return np.array(verts), np.array(faces)


def stacked_blocks():
    """A wide slab with a smaller block resting on it (non-starlike, 156 facets)."""
    v1, f1 = box_mesh((-1.5, -1.5, -0.5), (1.5, 1.5, 0.5), 3)
    v2, f2 = box_mesh((-0.4, -0.6, 0.5), (0.6, 0.4, 1.5), 2)
    return np.vstack([v1, v2]), np.vstack([f1, f2 + len(v1)])
