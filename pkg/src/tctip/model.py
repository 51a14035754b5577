"""Deterministic dimensionless model: vector field, equilibria, expansions.

States are numpy arrays (..., 2) holding (v, m).  The physically relevant
phase space is the unit square, which is forward invariant, but all
operations accept arbitrary real states (the reflected stochastic system
needs the full plane).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .params import ModelParams

__all__ = [
    "vector_field", "jacobian", "cubic_p", "cubic_p_max_location",
    "FixedPointSet", "fixed_points", "saddle_node_locus",
    "asymptotic_fixed_points", "center_manifold", "origin_center_dynamics",
    "Path", "integrate_ode", "rk4_step",
]

ROOT_TOL = 1e-12          # bisection half-width on v
DOUBLE_ROOT_TOL = 1e-10   # |p(v*)| below this means saddle-node degeneracy


def vector_field(x, p: ModelParams):
    """Rate of change (f, g) at state(s) x = (..., 2).

    f = (1-gamma) m^3 - (1-gamma m^3) v^2
    g = (1-m) v - c m
    """
    x = np.asarray(x, dtype=float)
    v, m = x[..., 0], x[..., 1]
    m3 = m * m * m
    f = (1.0 - p.gamma) * m3 - (1.0 - p.gamma * m3) * v * v
    g = (1.0 - m) * v - p.c * m
    return np.stack([f, g], axis=-1)


def jacobian(x, p: ModelParams):
    """Analytic Jacobian of the vector field, shape (..., 2, 2)."""
    x = np.asarray(x, dtype=float)
    v, m = x[..., 0], x[..., 1]
    m2 = m * m
    dfdv = -2.0 * v * (1.0 - p.gamma * m2 * m)
    dfdm = 3.0 * m2 * ((1.0 - p.gamma) + p.gamma * v * v)
    dgdv = 1.0 - m
    dgdm = -(v + p.c) * np.ones_like(v)
    J = np.stack([np.stack([dfdv, dfdm], axis=-1),
                  np.stack([dgdv, dgdm], axis=-1)], axis=-2)
    return J


def cubic_p(v, p: ModelParams):
    """Cubic whose positive roots are the v-coordinates of the storm states.

    p(v) = (1-gamma) v + gamma v^3 - (v+c)^3.  Fixed points away from the
    origin satisfy p(v) = 0 with m = v/(v+c); p(0) = -c^3 and p -> -inf, so
    there are either zero or two positive roots counting multiplicity.
    """
    v = np.asarray(v, dtype=float)
    return (1.0 - p.gamma) * v + p.gamma * v**3 - (v + p.c) ** 3


def cubic_p_max_location(p: ModelParams) -> float:
    """Location v* of the local maximum of cubic_p, or 0.0 if none exists
    on the positive axis."""
    g1 = 1.0 - p.gamma
    disc = g1 * g1 / 3.0 + p.c * p.c * p.gamma
    vstar = (-p.c + math.sqrt(disc)) / g1
    return max(vstar, 0.0)


@dataclass
class FixedPointSet:
    """Classified equilibria of the dimensionless system.

    status is one of "one" (origin only), "three" (origin, saddle, storm) or
    "saddle_node" (degenerate double root).  saddle and storm are both set or
    both None; each equilibrium carries its Jacobian and a stability label in
    {"stable-node", "saddle", "nonhyperbolic-stable"}.
    """

    origin: np.ndarray
    status: str
    saddle: np.ndarray | None = None
    storm: np.ndarray | None = None
    degenerate: np.ndarray | None = None
    jacobians: dict = field(default_factory=dict)
    stability: dict = field(default_factory=dict)

    def all_points(self):
        pts = {"origin": self.origin}
        if self.saddle is not None:
            pts["saddle"] = self.saddle
            pts["storm"] = self.storm
        if self.degenerate is not None:
            pts["degenerate"] = self.degenerate
        return pts


def _bisect(fun, lo, hi, flo, tol=ROOT_TOL):
    """Plain bisection; assumes a sign change on [lo, hi]."""
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = fun(mid)
        if fm == 0.0:
            return mid
        if (fm > 0.0) == (flo > 0.0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def _polish_root(p: ModelParams, v: float) -> float:
    """A few guarded Newton steps on cubic_p to push the residual to
    machine precision (the fixed-point residual contract is 1e-10)."""
    for _ in range(4):
        g1 = 1.0 - p.gamma
        val = g1 * v + p.gamma * v**3 - (v + p.c) ** 3
        der = g1 + 3.0 * p.gamma * v * v - 3.0 * (v + p.c) ** 2
        if der == 0.0:
            break
        step = val / der
        if not math.isfinite(step) or abs(step) > 0.1 * max(v, 1e-3):
            break
        v -= step
    return v


def _positive_roots(p: ModelParams):
    """Bracket positive roots of cubic_p by sign changes on a geometric grid
    over (0, 1], then bisect.  All positive roots lie in (0, 1] because
    p(v) <= (1-gamma)(v - v^3) - 3 c v^2 - 3 c^2 v - c^3 < 0 for v >= 1.
    Returns (roots, degenerate_flag)."""
    vstar = cubic_p_max_location(p)
    if vstar <= 0.0:
        return [], False
    pmax = float(cubic_p(vstar, p))
    if abs(pmax) <= DOUBLE_ROOT_TOL:
        return [], True
    if pmax < 0.0:
        return [], False
    lo = min(1e-8, 0.01 * p.c**3 / (1.0 - p.gamma))
    grid = np.geomspace(lo, 1.0, 1200)
    grid = np.sort(np.append(grid, vstar))
    vals = cubic_p(grid, p)
    fun = lambda v: float(cubic_p(v, p))
    roots = []
    # p(0) = -c^3 < 0, so prepend a synthetic negative sample at v -> 0+.
    prev_v, prev_f = 0.0, -p.c**3
    for v, f in zip(grid, vals):
        if f == 0.0:
            roots.append(float(v))
            prev_v, prev_f = v, f
            continue
        if prev_f != 0.0 and (f > 0.0) != (prev_f > 0.0):
            roots.append(_bisect(fun, prev_v, v, prev_f))
        prev_v, prev_f = v, f
    roots = [_polish_root(p, r) for r in roots]
    return sorted(roots), False


def _classify(J: np.ndarray) -> str:
    eig = np.linalg.eigvals(J)
    if np.all(eig.real < 0.0):
        return "stable-node"
    if eig.real.min() < 0.0 < eig.real.max():
        return "saddle"
    return "unclassified"


def fixed_points(p: ModelParams) -> FixedPointSet:
    """All equilibria of the dimensionless system, classified.

    The origin is always present; it is nonhyperbolic (eigenvalues 0 and -c)
    but asymptotically stable by the center-manifold argument, so it is
    labeled "nonhyperbolic-stable" rather than by eigenvalue signs.
    """
    origin = np.zeros(2)
    jac = {"origin": jacobian(origin, p)}
    stab = {"origin": "nonhyperbolic-stable"}
    roots, degen = _positive_roots(p)
    if degen:
        vstar = cubic_p_max_location(p)
        pt = np.array([vstar, vstar / (vstar + p.c)])
        fps = FixedPointSet(origin=origin, status="saddle_node", degenerate=pt,
                            jacobians=jac, stability=stab)
        fps.jacobians["degenerate"] = jacobian(pt, p)
        fps.stability["degenerate"] = "degenerate"
        return fps
    if len(roots) == 0:
        return FixedPointSet(origin=origin, status="one", jacobians=jac,
                             stability=stab)
    if len(roots) != 2:
        raise RuntimeError(f"expected 0 or 2 positive roots, found {len(roots)}")
    pts = [np.array([r, r / (r + p.c)]) for r in roots]
    fps = FixedPointSet(origin=origin, status="three",
                        saddle=pts[0], storm=pts[1],
                        jacobians=jac, stability=stab)
    for name, pt in (("saddle", pts[0]), ("storm", pts[1])):
        J = jacobian(pt, p)
        fps.jacobians[name] = J
        fps.stability[name] = _classify(J)
    return fps


def saddle_node_locus(gamma: float, tol: float = 1e-10) -> float:
    """Critical shear c*(gamma) where the storm states are born/destroyed.

    Solves p(v*(c, gamma)) = 0 by bisection in c on (1e-6, 1); p(v*) > 0
    as c -> 0 and < 0 at c = 1 for every gamma in (0, 1).
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")

    def height(c):
        p = ModelParams(gamma=gamma, c=c)
        vs = cubic_p_max_location(p)
        if vs <= 0.0:
            return -1.0
        return float(cubic_p(vs, p))

    lo, hi = 1e-6, 1.0
    flo, fhi = height(lo), height(hi)
    if not (flo > 0.0 > fhi):
        raise RuntimeError("saddle-node bracketing failed: "
                           f"p(v*) = {flo:.3g} at c={lo}, {fhi:.3g} at c={hi}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if height(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def asymptotic_fixed_points(p: ModelParams, variant: str = "printed"):
    """Small-c expansions of the saddle U and storm state S.

    U ~ (c^3/(1-g) + 3c^5/(1-g)^2, c^2/(1-g) + 2c^4/(1-g)^2) for both
    variants.  The S v-coordinate differs: variant "printed" returns
    1 - (3/2)(1-g)c, variant "derived" returns 1 - (3/2)c/(1-g), which is
    the coefficient the order-c balance of the root equation actually gives
    (the convergence test in the suite records that only the derived form
    attains second-order accuracy).  S.m = 1 - c in both.
    """
    g1 = 1.0 - p.gamma
    c = p.c
    u = np.array([c**3 / g1 + 3.0 * c**5 / g1**2,
                  c**2 / g1 + 2.0 * c**4 / g1**2])
    if variant == "printed":
        sv = 1.0 - 1.5 * g1 * c
    elif variant == "derived":
        sv = 1.0 - 1.5 * c / g1
    else:
        raise ValueError(f"unknown variant {variant!r}")
    s = np.array([sv, 1.0 - c])
    return u, s


def center_manifold(v, p: ModelParams, order: int = 5):
    """Center-manifold graph m(v) near the origin, to cubic or quintic order.

    m(v) = v/c + a3 v^3 + a4 v^4 + a5 v^5 with
    a3 = (gamma-1)/c^5, a4 = 2(gamma-1)/c^6,
    a5 = (6 - 6c^2 - 12 gamma + 6 c^2 gamma - c^4 gamma + 6 gamma^2)/c^9.
    order=3 truncates after a3.
    """
    if order not in (3, 5):
        raise ValueError("order must be 3 or 5")
    v = np.asarray(v, dtype=float)
    c, g = p.c, p.gamma
    m = v / c + (g - 1.0) / c**5 * v**3
    if order == 5:
        a5 = (6.0 - 6.0 * c**2 - 12.0 * g + 6.0 * c**2 * g - c**4 * g
              + 6.0 * g**2) / c**9
        m = m + 2.0 * (g - 1.0) / c**6 * v**4 + a5 * v**5
    return m


def origin_center_dynamics(v, p: ModelParams):
    """Flow restricted to the center manifold: f(v, m(v)) = -v^2 + O(v^3).

    The negative quadratic coefficient is what makes the origin
    asymptotically stable despite the zero eigenvalue.
    """
    v = np.asarray(v, dtype=float)
    m = center_manifold(v, p, order=5)
    x = np.stack([v, m], axis=-1)
    return vector_field(x, p)[..., 0]


@dataclass
class Path:
    """Time-discretized trajectory: taus (n,), states (n, 2)."""

    taus: np.ndarray
    states: np.ndarray

    def __len__(self):
        return len(self.taus)


def rk4_step(field, x, t, dt):
    """One classical Runge-Kutta step for dx/dt = field(x, t)."""
    k1 = field(x, t)
    k2 = field(x + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = field(x + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = field(x + dt * k3, t + dt)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_ode(x0, p: ModelParams, t_final: float, dt: float,
                  store_every: int = 1) -> Path:
    """Fixed-step RK4 integration of the deterministic field.

    Fixed stepping keeps trajectories bit-for-bit reproducible across runs.
    Aborts with a diagnostic if the state leaves the finite range.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    x = np.asarray(x0, dtype=float).copy()
    n_steps = int(round(t_final / dt))
    taus = [0.0]
    states = [x.copy()]
    field = lambda y, t: vector_field(y, p)
    t = 0.0
    for k in range(1, n_steps + 1):
        x = rk4_step(field, x, t, dt)
        t = k * dt
        if not np.all(np.isfinite(x)):
            raise RuntimeError(f"non-finite state at tau={t:.6g}: {x}")
        if k % store_every == 0 or k == n_steps:
            taus.append(t)
            states.append(x.copy())
    return Path(taus=np.array(taus), states=np.array(states))
