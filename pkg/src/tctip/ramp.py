"""Nonautonomous parameter shifts and rate-induced tipping.

The maximum potential velocity V_p and the wind shear ramp together between
past and future values through a monotone bi-asymptotic profile Lambda_r.
Because V_p becomes time dependent, wind is nondimensionalized by the fixed
reference V_p^- (the past value), which puts the factor (V_p(s)/V_p^-)^2 on
the moisture forcing and makes the moisture-loss coefficient
2.2 * shear(s) / V_p^-.

Unit convention (resolved here, documented in README): the shear amplitude
ramps as k * V_p(tau) in velocity units, so the instantaneous-units
dimensionless shear is the constant 2.2 * k for the default spec.  With
k = 0.13 this is 0.286, just below the saddle node at gamma = 0.43, which is
what keeps three equilibria alive along the entire ramp.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .model import (FixedPointSet, Path, ModelParams, fixed_points)
from .params import SHEAR_COUPLING

__all__ = [
    "RampSpec", "ramp_value", "ramped_params", "ramp_coefficients",
    "nonautonomous_field", "frozen_fixed_points", "RampResult",
    "simulate_ramp", "critical_rate", "InvariantBox", "BoxCheckResult",
    "check_invariant_box", "nonincreasing_no_tip_probe",
]

RAMP_SHAPES = ("tanh", "smoothstep", "piecewise_linear")
VERDICT_TOL = 1e-3
LAMBDA_START_TOL = 1e-6


@dataclass(frozen=True)
class RampSpec:
    """Parameter-shift definition.

    Lambda_r(tau) ramps monotonically from 0 to 1 at rate r;
    V_p(tau) = vp_minus (1 - Lambda) + vp_plus Lambda, and the shear
    amplitude defaults to k * V_p(tau) (velocity units).  Setting
    shear_minus/shear_plus decouples the shear ramp from V_p, which the
    no-tipping probes need.  r = 0 denotes the quasi-static limit.
    """

    r: float
    vp_minus: float = 10.0
    vp_plus: float = 100.0
    k: float = 0.13
    shape: str = "tanh"
    shear_minus: float | None = None
    shear_plus: float | None = None

    def __post_init__(self):
        if self.r < 0.0:
            raise ValueError("rate r must be nonnegative")
        if self.shape not in RAMP_SHAPES:
            raise ValueError(f"shape must be one of {RAMP_SHAPES}")
        if self.vp_minus <= 0.0 or self.vp_plus <= 0.0:
            raise ValueError("vp limits must be positive")
        if self.shear_minus is None:
            object.__setattr__(self, "shear_minus", self.k * self.vp_minus)
        if self.shear_plus is None:
            object.__setattr__(self, "shear_plus", self.k * self.vp_plus)

    @property
    def vp_ref(self) -> float:
        """Reference velocity for nondimensionalization (past V_p)."""
        return self.vp_minus


def ramp_value(tau, spec: RampSpec):
    """Ramp profile Lambda_r(tau) in [0, 1]; accepts scalars or arrays.

    tanh: (1 + tanh(r tau))/2.  smoothstep and piecewise_linear saturate
    exactly outside |r tau| <= 1; only tanh carries paper-anchored tests.
    """
    tau = np.asarray(tau, dtype=float)
    u = spec.r * tau
    if spec.shape == "tanh":
        lam = 0.5 * (1.0 + np.tanh(u))
    elif spec.shape == "smoothstep":
        t = np.clip(0.5 * (u + 1.0), 0.0, 1.0)
        lam = t * t * (3.0 - 2.0 * t)
    else:
        lam = np.clip(0.5 * (u + 1.0), 0.0, 1.0)
    if spec.r == 0.0:
        lam = np.full_like(tau, 0.5)
    return lam if lam.ndim else float(lam)


def ramped_params(tau, spec: RampSpec):
    """(V_p(tau), c(tau)) with c = k V_p, the ramped pair in velocity units.

    c(tau) here is the shear amplitude the moisture equation couples to; the
    dimensionless coefficients actually entering the augmented field come
    from :func:`ramp_coefficients`.
    """
    lam = ramp_value(tau, spec)
    vp = spec.vp_minus * (1.0 - lam) + spec.vp_plus * lam
    shear = spec.shear_minus * (1.0 - lam) + spec.shear_plus * lam
    return vp, shear


def ramp_coefficients(tau, spec: RampSpec):
    """Dimensionless coefficients of the augmented system at ramp clock tau.

    Returns (w, c12) where w = V_p(tau)/V_p^- multiplies the moisture
    forcing as w^2 and c12 = 2.2 * shear(tau) / V_p^- is the moisture-loss
    coefficient.
    """
    vp, shear = ramped_params(tau, spec)
    w = vp / spec.vp_ref
    c12 = SHEAR_COUPLING * shear / spec.vp_ref
    return w, c12


def nonautonomous_field(x, spec: RampSpec, gamma: float):
    """Augmented autonomous field on (v, m, s).

    dv/dtau = (1-gamma) (V_p(s)/V_p^-)^2 m^3 - (1 - gamma m^3) v^2
    dm/dtau = (1-m) v - c12(s) m
    ds/dtau = 1
    """
    x = np.asarray(x, dtype=float)
    v, m, s = x[..., 0], x[..., 1], x[..., 2]
    w, c12 = ramp_coefficients(s, spec)
    m3 = m * m * m
    f = (1.0 - gamma) * w * w * m3 - (1.0 - gamma * m3) * v * v
    g = (1.0 - m) * v - c12 * m
    return np.stack([f, g, np.ones_like(s)], axis=-1)


def _frozen_jacobian(v, m, w, c12, gamma):
    return np.array([
        [-2.0 * v * (1.0 - gamma * m**3),
         3.0 * m * m * ((1.0 - gamma) * w * w + gamma * v * v)],
        [1.0 - m, -(v + c12)],
    ])


def frozen_fixed_points(s, spec: RampSpec, gamma: float) -> FixedPointSet:
    """Equilibria of the frozen-clock system at ramp time s.

    The frozen cubic is homogeneous under (v, c12, w) -> (lam v, lam c12,
    lam w), so the roots are w times the roots of the standard cubic at the
    instantaneous-units shear c12/w.  Coordinates returned in V_p^- units
    (the same units trajectories use); m is scale invariant.
    """
    w, c12 = ramp_coefficients(s, spec)
    ctil = c12 / w
    base = fixed_points(ModelParams(gamma=gamma, c=ctil))
    origin = np.zeros(2)
    jac = {"origin": _frozen_jacobian(0.0, 0.0, w, c12, gamma)}
    stab = {"origin": "nonhyperbolic-stable"}
    if base.status != "three":
        out = FixedPointSet(origin=origin, status=base.status,
                            jacobians=jac, stability=stab)
        if base.degenerate is not None:
            out.degenerate = np.array([w * base.degenerate[0], base.degenerate[1]])
        return out
    out = FixedPointSet(origin=origin, status="three", jacobians=jac, stability=stab)
    for name in ("saddle", "storm"):
        pt = getattr(base, name)
        scaled = np.array([w * pt[0], pt[1]])
        setattr(out, name, scaled)
        J = _frozen_jacobian(scaled[0], scaled[1], w, c12, gamma)
        out.jacobians[name] = J
        eig = np.linalg.eigvals(J)
        out.stability[name] = ("stable-node" if np.all(eig.real < 0)
                               else "saddle")
    return out


@dataclass
class RampResult:
    path: Path
    verdict: str          # "tracked" | "tipped_to_O" | "undetermined"
    final_state: np.ndarray
    spec: RampSpec
    tau0: float
    tau_f: float


def _integrate_augmented(x0, spec: RampSpec, gamma: float, tau0: float,
                         tau_f: float, dt: float, store_every: int):
    """Scalar RK4 on the augmented system, python floats for speed."""
    r, shape = spec.r, spec.shape
    vpm, vpp = spec.vp_minus, spec.vp_plus
    shm, shp = spec.shear_minus, spec.shear_plus
    vref = spec.vp_ref
    g1 = 1.0 - gamma

    def deriv(v, m, s):
        u = r * s
        if shape == "tanh":
            lam = 0.5 * (1.0 + math.tanh(u))
        elif shape == "smoothstep":
            t = min(max(0.5 * (u + 1.0), 0.0), 1.0)
            lam = t * t * (3.0 - 2.0 * t)
        else:
            lam = min(max(0.5 * (u + 1.0), 0.0), 1.0)
        if r == 0.0:
            lam = 0.5
        vp = vpm + (vpp - vpm) * lam
        sh = shm + (shp - shm) * lam
        w = vp / vref
        c12 = SHEAR_COUPLING * sh / vref
        m3 = m * m * m
        return (g1 * w * w * m3 - (1.0 - gamma * m3) * v * v,
                (1.0 - m) * v - c12 * m)

    v, m = float(x0[0]), float(x0[1])
    s = tau0
    n_steps = int(round((tau_f - tau0) / dt))
    taus = [tau0]
    states = [(v, m)]
    half = 0.5 * dt
    sixth = dt / 6.0
    for kstep in range(1, n_steps + 1):
        f1, g1_ = deriv(v, m, s)
        f2, g2 = deriv(v + half * f1, m + half * g1_, s + half)
        f3, g3 = deriv(v + half * f2, m + half * g2, s + half)
        f4, g4 = deriv(v + dt * f3, m + dt * g3, s + dt)
        v += sixth * (f1 + 2.0 * (f2 + f3) + f4)
        m += sixth * (g1_ + 2.0 * (g2 + g3) + g4)
        s = tau0 + kstep * dt
        if kstep % store_every == 0 or kstep == n_steps:
            if not (math.isfinite(v) and math.isfinite(m)):
                raise RuntimeError(f"non-finite state at tau={s:.6g}")
            taus.append(s)
            states.append((v, m))
    return Path(taus=np.array(taus), states=np.array(states)), np.array([v, m])


def _quasi_static_verdict(spec: RampSpec, gamma: float) -> str:
    """r = 0 limit: continuation of the stable storm branch across the ramp.

    In the quasi-static limit a uniformly stable frozen branch is tracked
    exactly; tracking only fails if the branch loses existence or stability
    somewhere along the ramp.
    """
    for lam in np.linspace(0.0, 1.0, 201):
        vp = spec.vp_minus * (1.0 - lam) + spec.vp_plus * lam
        sh = spec.shear_minus * (1.0 - lam) + spec.shear_plus * lam
        ctil = SHEAR_COUPLING * sh / vp
        fps = fixed_points(ModelParams(gamma=gamma, c=ctil))
        if fps.status != "three" or fps.stability.get("storm") != "stable-node":
            return "undetermined"
    return "tracked"


def simulate_ramp(x0, spec: RampSpec, gamma: float, tau0: float | None = None,
                  tau_f: float | None = None, dt: float = 0.01,
                  store_every: int = 10, extra_settle: float = 0.0) -> RampResult:
    """Integrate the augmented system through the ramp and classify the end.

    x0 = None starts from the frozen stable storm state S^- at tau0.
    Defaults: tau0 = -20/r (enforcing Lambda(tau0) < 1e-6) and
    tau_f = 200/r + 500, the 500 being a settling horizon at the frozen end
    parameters.  Verdict "tracked" if the final state lies within 1e-3 of
    S^+, "tipped_to_O" if within 1e-3 of the origin, else "undetermined".
    """
    if spec.r == 0.0:
        fps_mid = frozen_fixed_points(0.0, spec, gamma)
        if fps_mid.storm is None:
            raise ValueError("quasi-static ramp needs three equilibria")
        verdict = _quasi_static_verdict(spec, gamma)
        path = Path(taus=np.array([0.0]), states=fps_mid.storm[None, :].copy())
        return RampResult(path=path, verdict=verdict,
                          final_state=fps_mid.storm.copy(), spec=spec,
                          tau0=0.0, tau_f=0.0)
    if tau0 is None:
        tau0 = -20.0 / spec.r
    if tau_f is None:
        tau_f = 200.0 / spec.r + 500.0
    tau_f += extra_settle
    if ramp_value(tau0, spec) >= LAMBDA_START_TOL:
        raise ValueError(f"tau0={tau0} is not early enough: "
                         f"Lambda(tau0)={ramp_value(tau0, spec):.3g} >= 1e-6")
    if x0 is None:
        start = frozen_fixed_points(tau0, spec, gamma)
        if start.storm is None:
            raise ValueError("no storm state at ramp start")
        x0 = start.storm
    path, final = _integrate_augmented(x0, spec, gamma, tau0, tau_f, dt,
                                       store_every)
    end = frozen_fixed_points(tau_f + 1e9, spec, gamma)
    verdict = "undetermined"
    if end.storm is not None and np.hypot(*(final - end.storm)) < VERDICT_TOL:
        verdict = "tracked"
    elif np.hypot(*final) < VERDICT_TOL:
        verdict = "tipped_to_O"
    return RampResult(path=path, verdict=verdict, final_state=final,
                      spec=spec, tau0=tau0, tau_f=tau_f)


def critical_rate(spec_template: RampSpec, gamma: float, r_lo: float,
                  r_hi: float, tol: float, dt: float = 0.01):
    """Bisection for the critical rate: tracked at r_lo*, tipped at r_hi*.

    The endpoints must already have differing verdicts.  An undetermined
    verdict triggers up to three doublings of the settling horizon before
    the bisection gives up.
    """

    def verdict_at(r):
        extra = 0.0
        for _ in range(4):
            res = simulate_ramp(None, replace(spec_template, r=r), gamma,
                                dt=dt, store_every=10**9, extra_settle=extra)
            if res.verdict != "undetermined":
                return res.verdict
            extra = 2.0 * extra if extra else 500.0
        raise RuntimeError(f"verdict still undetermined at r={r}")

    v_lo, v_hi = verdict_at(r_lo), verdict_at(r_hi)
    if v_lo != "tracked" or v_hi != "tipped_to_O":
        raise ValueError(f"bracket invalid: verdicts ({v_lo}, {v_hi}) at "
                         f"({r_lo}, {r_hi})")
    while r_hi - r_lo > tol:
        mid = 0.5 * (r_lo + r_hi)
        if verdict_at(mid) == "tracked":
            r_lo = mid
        else:
            r_hi = mid
    return r_lo, r_hi


@dataclass(frozen=True)
class InvariantBox:
    """Candidate forward-invariant box [a1, b1] x [a2, b2]."""

    a1: float
    b1: float
    a2: float
    b2: float

    def __post_init__(self):
        if not (self.a1 < self.b1 and self.a2 < self.b2):
            raise ValueError("box requires a1 < b1 and a2 < b2")


@dataclass
class BoxCheckResult:
    invariant: bool
    sampled_invariant: bool
    closed_form_margins: np.ndarray   # sides 1..4
    sampled_margins: np.ndarray       # sides 1..4
    worst_margin: float


def check_invariant_box(box: InvariantBox, vp: float, vp_ref: float, c: float,
                        gamma: float, n_samples: int = 1000) -> BoxCheckResult:
    """Verify the four side conditions for forward invariance of the box.

    c is the moisture-loss coefficient of the frozen system (in vp_ref
    units).  The closed-form margins are
      side 1: a2 - cbrt(a1^2 / ((1-gamma) w^2 + gamma a1^2))   (inflow at v=a1)
      side 2: a1/(a1+c) - a2                                   (inflow at m=a2)
      side 3: cbrt(b1^2 / ((1-gamma) w^2 + gamma b1^2)) - b2   (inflow at v=b1)
      side 4: b2 - b1/(b1+c)                                   (inflow at m=b2)
    and the sampled margins are the worst signed normal derivative on a
    dense sampling of each side.  Failure is a verdict, not an error.
    """
    w = vp / vp_ref
    g1 = 1.0 - gamma
    a1, b1, a2, b2 = box.a1, box.b1, box.a2, box.b2
    cf = np.array([
        a2 - (a1 * a1 / (g1 * w * w + gamma * a1 * a1)) ** (1.0 / 3.0),
        a1 / (a1 + c) - a2,
        (b1 * b1 / (g1 * w * w + gamma * b1 * b1)) ** (1.0 / 3.0) - b2,
        b2 - b1 / (b1 + c),
    ])

    def fdot(v, m):
        m3 = m * m * m
        return g1 * w * w * m3 - (1.0 - gamma * m3) * v * v

    def gdot(v, m):
        return (1.0 - m) * v - c * m

    ms = np.linspace(a2, b2, n_samples)
    vs = np.linspace(a1, b1, n_samples)
    sampled = np.array([
        np.min(fdot(a1, ms)),      # want vdot > 0 on v = a1
        np.min(gdot(vs, a2)),      # want mdot > 0 on m = a2
        np.min(-fdot(b1, ms)),     # want vdot < 0 on v = b1
        np.min(-gdot(vs, b2)),     # want mdot < 0 on m = b2
    ])
    return BoxCheckResult(
        invariant=bool(np.all(cf > 0.0)),
        sampled_invariant=bool(np.all(sampled > 0.0)),
        closed_form_margins=cf,
        sampled_margins=sampled,
        worst_margin=float(min(cf.min(), sampled.min())),
    )


def nonincreasing_no_tip_probe(spec: RampSpec, gamma: float, r_list,
                               dt: float = 0.01):
    """Falsification harness for the no-tipping theorem.

    Requires a spec whose V_p or shear amplitude is nonincreasing along the
    ramp and three frozen equilibria for all clock values; runs the ramp
    from S^- at each rate and reports the verdicts (all expected tracked).
    """
    vp_dec = spec.vp_plus <= spec.vp_minus
    c12_minus = SHEAR_COUPLING * spec.shear_minus / spec.vp_ref
    c12_plus = SHEAR_COUPLING * spec.shear_plus / spec.vp_ref
    c_dec = c12_plus <= c12_minus
    if not (vp_dec or c_dec):
        raise ValueError("probe needs V_p or the shear coefficient "
                         "nonincreasing along the ramp")
    for lam in np.linspace(0.0, 1.0, 41):
        vp = spec.vp_minus * (1.0 - lam) + spec.vp_plus * lam
        sh = spec.shear_minus * (1.0 - lam) + spec.shear_plus * lam
        ctil = SHEAR_COUPLING * sh / vp
        if fixed_points(ModelParams(gamma=gamma, c=ctil)).status != "three":
            raise ValueError(f"frozen system loses equilibria at Lambda={lam}")
    verdicts = []
    for r in r_list:
        res = simulate_ramp(None, replace(spec, r=float(r)), gamma, dt=dt,
                            store_every=10**9)
        verdicts.append(res.verdict)
    return verdicts
