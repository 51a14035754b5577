"""Invariant manifolds of the saddle, basin membership, separatrix extraction.

The stable manifold of the saddle U separates the basin of the non-storm
state O from the basin of the storm state S; its first-quadrant polyline is
the separatrix used for noise-induced tipping detection.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelParams, fixed_points, jacobian, rk4_step, vector_field

__all__ = [
    "ManifoldBranch", "saddle_manifold", "separatrix_polyline",
    "separatrix_side", "classify_basin", "basin_grid",
    "BASIN_O", "BASIN_S", "BOUNDARY", "UNRESOLVED",
]

BASIN_O = "basin_O"
BASIN_S = "basin_S"
BOUNDARY = "boundary"
UNRESOLVED = "unresolved"

DEFAULT_BOX = ((-0.1, 1.5), (-0.1, 1.5))


@dataclass
class ManifoldBranch:
    """One branch of an invariant manifold of the saddle.

    points start within eps of the saddle along branch_sign * eigenvector
    and are spaced by at most the arclength step used for tracing.
    """

    kind: str                 # "stable" | "unstable"
    branch_sign: int          # +1 | -1
    points: np.ndarray        # (n, 2)
    eigenvalue: float
    eigenvector: np.ndarray   # unit 2-vector


def _saddle_directions(p: ModelParams):
    """Eigen-decomposition at the saddle; orientation fixed so that each
    eigenvector has a nonnegative v-component (m-component breaks ties)."""
    fps = fixed_points(p)
    if fps.saddle is None:
        raise ValueError("no saddle for these parameters "
                         f"(status={fps.status!r})")
    J = jacobian(fps.saddle, p)
    lam, vecs = np.linalg.eig(J)
    if np.any(np.abs(lam.imag) > 1e-12) or lam.real.min() >= 0 or lam.real.max() <= 0:
        raise RuntimeError(f"degenerate eigen-decomposition at saddle: {lam}")
    lam = lam.real
    vecs = vecs.real
    out = {}
    for kind, idx in (("stable", int(np.argmin(lam))),
                      ("unstable", int(np.argmax(lam)))):
        vec = vecs[:, idx] / np.linalg.norm(vecs[:, idx])
        if vec[0] < 0 or (vec[0] == 0 and vec[1] < 0):
            vec = -vec
        out[kind] = (float(lam[idx]), vec)
    return fps.saddle, out


def saddle_manifold(p: ModelParams, kind: str, branch_sign: int,
                    eps: float = 1e-6, arclength_step: float = 2e-3,
                    max_arclength: float = 4.0,
                    box=DEFAULT_BOX) -> ManifoldBranch:
    """Trace one stable/unstable manifold branch of the saddle U.

    The stable branch is computed by time-reversed integration from
    U + branch_sign * eps * (stable eigenvector), the unstable branch by
    forward integration.  Integration uses the unit-speed field so that
    consecutive polyline points are separated by one arclength step even in
    the slow region near the saddle.  Tracing stops on leaving the bounding
    box or after max_arclength.
    """
    if kind not in ("stable", "unstable"):
        raise ValueError("kind must be 'stable' or 'unstable'")
    if branch_sign not in (1, -1):
        raise ValueError("branch_sign must be +1 or -1")
    if not 1e-8 <= eps <= 1e-4:
        raise ValueError("eps must lie in [1e-8, 1e-4]")
    saddle, dirs = _saddle_directions(p)
    lam, vec = dirs[kind]
    sign = -1.0 if kind == "stable" else 1.0

    def unit_field(x, t):
        F = vector_field(x, p)
        speed = np.linalg.norm(F)
        if speed == 0.0:
            return np.zeros_like(F)
        return sign * F / speed

    fps = fixed_points(p)
    attractors = [fps.origin, fps.storm]
    x = saddle + branch_sign * eps * vec
    pts = [x.copy()]
    (vlo, vhi), (mlo, mhi) = box
    n_steps = int(max_arclength / arclength_step)
    for _ in range(n_steps):
        x = rk4_step(unit_field, x, 0.0, arclength_step)
        pts.append(x.copy())
        if not (vlo <= x[0] <= vhi and mlo <= x[1] <= mhi):
            break
        if kind == "unstable" and any(
                np.hypot(*(x - a)) < 0.5 * arclength_step for a in attractors):
            break
    return ManifoldBranch(kind=kind, branch_sign=branch_sign,
                          points=np.array(pts), eigenvalue=lam,
                          eigenvector=vec)


def separatrix_polyline(p: ModelParams, arclength_step: float = 2e-3,
                        box=DEFAULT_BOX) -> np.ndarray:
    """First-quadrant separatrix: both stable branches joined through U.

    Returns an (n, 2) polyline ordered by increasing v.  One branch climbs
    toward the v = 0 axis, the other descends to the m = 0 axis; the
    corresponding axis crossings bound the covered v-range.
    """
    saddle, dirs = _saddle_directions(p)
    minus = saddle_manifold(p, "stable", -1, arclength_step=arclength_step, box=box)
    plus = saddle_manifold(p, "stable", +1, arclength_step=arclength_step, box=box)
    # Orientation fixed the eigenvector toward increasing v, so the -1 branch
    # heads up-left and the +1 branch down-right.
    left, right = minus.points, plus.points
    if left[-1, 0] > right[-1, 0]:
        left, right = right, left
    poly = np.vstack([left[::-1], saddle[None, :], right])
    # clip to the closed first quadrant; tracing runs slightly past the axes
    keep = (poly[:, 0] >= -1e-12) & (poly[:, 1] >= -1e-12)
    poly = poly[keep]
    order = np.argsort(poly[:, 0], kind="stable")
    poly = poly[order]
    # strictly increasing v for interpolation-based side tests
    dedup = np.concatenate([[True], np.diff(poly[:, 0]) > 1e-15])
    return poly[dedup]


def polyline_distance(points, polyline: np.ndarray):
    """Euclidean distance from points (..., 2) to a polyline (n, 2).

    Nearest-vertex query plus projection onto the adjacent segments; exact
    for polylines whose segments are short against their curvature.
    """
    from scipy.spatial import cKDTree

    pts = np.atleast_2d(np.asarray(points, dtype=float))
    tree = cKDTree(polyline)
    dv, idx = tree.query(pts)
    out = dv.copy()
    npts = len(polyline)
    for loc, (pt, i) in enumerate(zip(pts, idx)):
        for seg in (i - 1, i):
            if seg < 0 or seg + 1 >= npts:
                continue
            a, b = polyline[seg], polyline[seg + 1]
            ab = b - a
            denom = float(ab @ ab)
            if denom == 0.0:
                continue
            t = min(max(float((pt - a) @ ab) / denom, 0.0), 1.0)
            proj = a + t * ab
            out[loc] = min(out[loc], float(np.hypot(*(pt - proj))))
    if np.asarray(points).ndim == 1:
        return float(out[0])
    return out


def separatrix_side(points, polyline: np.ndarray):
    """Signed side of the separatrix for first-quadrant points.

    Positive values lie on the storm-basin side (above/right of the
    polyline), negative on the non-storm side.  Points with v beyond the
    polyline's right end (where the separatrix has already met m = 0) are
    storm-side for any m > 0.
    """
    pts = np.asarray(points, dtype=float)
    v, m = pts[..., 0], pts[..., 1]
    sep_m = np.interp(v, polyline[:, 0], polyline[:, 1],
                      left=polyline[0, 1], right=0.0)
    return m - sep_m


def classify_basin(x0, p: ModelParams, t_max: float = 1e4, tol: float = 5e-3,
                   dt: float = 0.02):
    """Basin membership by forward integration.

    Integrates each initial state until it enters the tol-ball of O or S
    (or of U, labeled "boundary"); states still undecided at t_max are
    "unresolved".  x0 may be a single state (2,) or a batch (n, 2); returns
    a scalar label or an array of labels.
    """
    fps = fixed_points(p)
    if fps.storm is None:
        raise ValueError("basin classification needs three equilibria")
    single = np.asarray(x0, dtype=float).ndim == 1
    x = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    n = len(x)
    labels = np.array([UNRESOLVED] * n, dtype=object)
    active = np.ones(n, dtype=bool)
    # trajectories near the separatrix shadow the saddle before splitting,
    # so only the attractor balls decide during the flow; the saddle ball is
    # consulted once at the horizon
    targets = {BASIN_O: fps.origin, BASIN_S: fps.storm}
    n_steps = int(t_max / dt)
    check_every = 5
    for k in range(n_steps):
        xa = x[active]
        if xa.size == 0:
            break
        F1 = vector_field(xa, p)
        F2 = vector_field(xa + 0.5 * dt * F1, p)
        F3 = vector_field(xa + 0.5 * dt * F2, p)
        F4 = vector_field(xa + dt * F3, p)
        x[active] = xa + (dt / 6.0) * (F1 + 2 * F2 + 2 * F3 + F4)
        if k % check_every == 0 or k == n_steps - 1:
            idx = np.flatnonzero(active)
            xa = x[idx]
            for name, tgt in targets.items():
                d = np.hypot(xa[:, 0] - tgt[0], xa[:, 1] - tgt[1])
                hit = d < tol
                if np.any(hit):
                    labels[idx[hit]] = name
                    active[idx[hit]] = False
                    idx = np.flatnonzero(active)
                    xa = x[idx]
                    if xa.size == 0:
                        break
    still = np.flatnonzero(active)
    if len(still):
        d = np.hypot(x[still, 0] - fps.saddle[0], x[still, 1] - fps.saddle[1])
        labels[still[d < tol]] = BOUNDARY
    if single:
        return labels[0]
    return labels


def basin_grid(p: ModelParams, resolution=(101, 101), extent=((0.0, 1.0), (0.0, 1.0)),
               t_max: float = 1e4, tol: float = 5e-3, dt: float = 0.02):
    """classify_basin over a rectangular lattice.

    Returns (v_nodes, m_nodes, labels) with labels shaped (len(m_nodes),
    len(v_nodes)) so that labels[i, j] is the state (v_nodes[j], m_nodes[i]).
    """
    nv, nm = resolution
    (vlo, vhi), (mlo, mhi) = extent
    v_nodes = np.linspace(vlo, vhi, nv)
    m_nodes = np.linspace(mlo, mhi, nm)
    V, M = np.meshgrid(v_nodes, m_nodes)
    pts = np.stack([V.ravel(), M.ravel()], axis=-1)
    labels = classify_basin(pts, p, t_max=t_max, tol=tol, dt=dt)
    return v_nodes, m_nodes, labels.reshape(nm, nv)
