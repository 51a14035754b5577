"""Stochastic simulation: reflected Euler-Maruyama, tipping detection,
ensembles, and the combined rate-plus-noise system.

Additive noise can push realizations out of the physical quadrant, so the
SDE is solved on the extended plane with the reflected vector field (the
four-quadrant extension that flips both components with sign(v) and takes
absolute coordinates) and mapped back by componentwise absolute value.

Reproducibility contract: realization j of a run with seed s draws all of
its normals from a counter-based Philox generator keyed by (s, j); column 0
feeds W1 and column 1 feeds W2.  Every draw is a pure function of
(seed, realization index, draw index), independent of execution order and
batching.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .model import ModelParams, vector_field
from .ramp import RampSpec, frozen_fixed_points, ramp_coefficients, ramp_value
from .manifolds import separatrix_polyline, separatrix_side

__all__ = [
    "NoiseSpec", "Realization", "EnsembleStats", "CombinedResult",
    "reflected_field", "reflect", "euler_maruyama", "detect_tips",
    "polyline_side_nearest", "run_ensemble", "combined_rate_noise",
]

CHUNK_STEPS = 20000
COVERAGE_BOUND = 1.5   # matches the separatrix tracing box


@dataclass(frozen=True)
class NoiseSpec:
    """Noise intensities, seed, step size and horizon for one experiment.

    sigma1/sigma2 = 0 is allowed as the deterministic control limit.
    """

    sigma1: float
    sigma2: float
    seed: int
    dt: float
    tau_f: float

    def __post_init__(self):
        if self.sigma1 < 0.0 or self.sigma2 < 0.0:
            raise ValueError("noise intensities must be nonnegative")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.tau_f < self.dt:
            raise ValueError("tau_f must be at least dt")


@dataclass
class Realization:
    """One sample path (raw, extended-plane coordinates) plus tip events.

    tip_events is a list of (kind, tau_star) with kind in
    {"O_to_S", "S_to_O"}; times are strictly increasing and kinds alternate.
    """

    taus: np.ndarray
    path: np.ndarray          # (n, 2) raw hat-plane states
    tip_events: list = field(default_factory=list)
    store_every: int = 1
    coverage_exceeded: bool = False


@dataclass
class EnsembleStats:
    n_realizations: int
    n_tipped: int
    tip_fraction: float
    tip_time_mean: float | None
    tip_time_median: float | None


def _stream(seed: int, j: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), j]))


def reflected_field(x, p: ModelParams):
    """Extended-plane drift, odd across each axis:

        f_hat(v, m) = sign(v) f(|v|, |m|),
        g_hat(v, m) = sign(m) g(|v|, |m|).

    Each component flips with the sign of its own coordinate, so |v|, |m|
    always follow the physical first-quadrant drift and the extended system
    stays bounded; on the coordinate axes the limiting first-quadrant
    formula applies (sign(0) taken as +1).
    """
    x = np.asarray(x, dtype=float)
    v, m = x[..., 0], x[..., 1]
    sv = np.where(v >= 0.0, 1.0, -1.0)
    sm = np.where(m >= 0.0, 1.0, -1.0)
    F = vector_field(np.stack([np.abs(v), np.abs(m)], axis=-1), p)
    return np.stack([sv * F[..., 0], sm * F[..., 1]], axis=-1)


def reflect(x):
    """Map an extended-plane state to its physical image, |.| componentwise."""
    return np.abs(np.asarray(x, dtype=float))


class _SideTracker:
    """Streaming basin side of reflected states against the separatrix."""

    def __init__(self, separatrix: np.ndarray):
        self.sep_v = separatrix[:, 0]
        self.sep_m = separatrix[:, 1]
        self.m_left = separatrix[0, 1]

    def sides(self, av, am):
        sep = np.interp(av, self.sep_v, self.sep_m,
                        left=self.m_left, right=0.0)
        return np.sign(am - sep)


def _simulate_batch(x0, p: ModelParams, n: NoiseSpec, stream_indices,
                    store_every: int = 0,
                    separatrix: np.ndarray | None = None):
    """Euler-Maruyama on the extended plane, vectorized over realizations.

    Tip detection (when a separatrix polyline is supplied) runs at full
    step resolution on the reflected coordinates regardless of the storage
    decimation.
    """
    count = len(stream_indices)
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        v = np.full(count, x0[0])
        m = np.full(count, x0[1])
    else:
        v = x0[:, 0].astype(float).copy()
        m = x0[:, 1].astype(float).copy()
    gens = [_stream(n.seed, j) for j in stream_indices]
    n_steps = int(round(n.tau_f / n.dt))
    dt = n.dt
    gamma, c = p.gamma, p.c
    g1 = 1.0 - gamma
    a1, a2 = n.sigma1 * math.sqrt(dt), n.sigma2 * math.sqrt(dt)

    detect = separatrix is not None
    events = [[] for _ in range(count)]
    if detect:
        tracker = _SideTracker(separatrix)
        side = tracker.sides(np.abs(v), np.abs(m))
        side[side == 0.0] = -1.0
    coverage = np.zeros(count, dtype=bool)

    store = store_every > 0
    if store:
        capacity = n_steps // store_every + 2
        taus_stored = np.empty(capacity)
        paths = np.empty((capacity, count, 2))
        taus_stored[0] = 0.0
        paths[0, :, 0] = v
        paths[0, :, 1] = m
        stored = 1
    else:
        taus_stored, paths, stored = None, None, 0

    done = 0
    while done < n_steps:
        k = min(CHUNK_STEPS, n_steps - done)
        noise = np.empty((k, count, 2))
        for j, gen in enumerate(gens):
            noise[:, j, :] = gen.standard_normal((k, 2))
        for i in range(k):
            sv = np.where(v >= 0.0, 1.0, -1.0)
            sm = np.where(m >= 0.0, 1.0, -1.0)
            av = np.abs(v)
            am = np.abs(m)
            m3 = am * am * am
            f = g1 * m3 - (1.0 - gamma * m3) * av * av
            g = (1.0 - am) * av - c * am
            v = v + dt * (sv * f) + a1 * noise[i, :, 0]
            m = m + dt * (sm * g) + a2 * noise[i, :, 1]
            kstep = done + i + 1
            if detect:
                new_side = tracker.sides(np.abs(v), np.abs(m))
                undecided = new_side == 0.0
                if np.any(undecided):
                    new_side[undecided] = side[undecided]
                changed = np.flatnonzero(new_side != side)
                for j in changed:
                    kind = "O_to_S" if new_side[j] > 0 else "S_to_O"
                    events[j].append((kind, kstep * dt))
                side = new_side
            if store and (kstep % store_every == 0 or kstep == n_steps):
                taus_stored[stored] = kstep * dt
                paths[stored, :, 0] = v
                paths[stored, :, 1] = m
                stored += 1
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(m))):
            bad = np.flatnonzero(~(np.isfinite(v) & np.isfinite(m)))
            raise RuntimeError(f"non-finite state in realizations {bad[:5]} "
                               f"near tau={done * dt:.6g}")
        coverage |= (np.abs(v) > COVERAGE_BOUND) | (np.abs(m) > COVERAGE_BOUND)
        done += k

    finals = np.stack([v, m], axis=-1)
    if store:
        taus_stored = taus_stored[:stored]
        paths = paths[:stored]
    return finals, events, taus_stored, paths, coverage


def euler_maruyama(x0, p: ModelParams, n: NoiseSpec, store_every: int = 10,
                   realization_index: int = 0,
                   separatrix: np.ndarray | None = None) -> Realization:
    """One realization of the reflected-plane SDE.

    x_{k+1} = x_k + F_hat(x_k) dt + (sigma1 sqrt(dt) xi1, sigma2 sqrt(dt) xi2)
    with the normals drawn from the (seed, realization_index) stream.  The
    raw path is stored every store_every steps; if a separatrix polyline is
    supplied, tip events are detected at full step resolution while
    stepping.
    """
    finals, events, taus, paths, coverage = _simulate_batch(
        x0, p, n, [realization_index], store_every=store_every,
        separatrix=separatrix)
    return Realization(taus=taus, path=paths[:, 0, :], tip_events=events[0],
                       store_every=store_every,
                       coverage_exceeded=bool(coverage[0]))


def polyline_side_nearest(points, polyline: np.ndarray,
                          tree: cKDTree | None = None):
    """Signed side of a polyline by nearest-segment cross products.

    General method (no monotonicity assumption), oriented so that positive
    matches the storm-basin side of the separatrix.  Cross-validates the
    interpolation-based side test used in the hot loops.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if tree is None:
        tree = cKDTree(polyline)
    _, idx = tree.query(pts)
    npts = len(polyline)
    out = np.empty(len(pts))
    for loc, (pt, i) in enumerate(zip(pts, idx)):
        best = None
        for seg in (i - 1, i):
            if seg < 0 or seg + 1 >= npts:
                continue
            a, b = polyline[seg], polyline[seg + 1]
            ab = b - a
            denom = float(ab @ ab)
            t = min(max(float((pt - a) @ ab) / denom, 0.0), 1.0)
            proj = a + t * ab
            d = math.hypot(*(pt - proj))
            cross = ab[0] * (pt[1] - a[1]) - ab[1] * (pt[0] - a[0])
            if best is None or d < best[0]:
                best = (d, cross)
        # polyline ordered by increasing v with m decreasing, so a positive
        # cross product lies above-right of the curve (storm side)
        out[loc] = math.copysign(1.0, best[1]) if best[1] != 0.0 else 0.0
    return out if np.asarray(points).ndim > 1 else float(out[0])


def detect_tips(real: Realization, p: ModelParams, separatrix: np.ndarray):
    """Tipping events of a stored realization against a separatrix polyline.

    The reflected (physical) path is classified by side-of-polyline tests;
    each sign change is an event, so times increase strictly and kinds
    alternate.  Events are resolved at the path's stored resolution.
    Returns (events, unresolved); unresolved is flagged when the path leaves
    the region the polyline covers.
    """
    phys = reflect(real.path)
    sides = np.sign(separatrix_side(phys, separatrix))
    for i in range(len(sides)):
        if sides[i] == 0.0:
            sides[i] = sides[i - 1] if i else -1.0
    flips = np.flatnonzero(sides[1:] != sides[:-1]) + 1
    events = []
    for i in flips:
        kind = "O_to_S" if sides[i] > 0 else "S_to_O"
        events.append((kind, float(real.taus[i])))
    unresolved = bool(np.any(phys > COVERAGE_BOUND))
    return events, unresolved


def _first_tip_times(events_lists, expected_kind):
    times = []
    for ev in events_lists:
        for kind, tau in ev:
            if kind == expected_kind:
                times.append(tau)
                break
    return times


def run_ensemble(x0, p: ModelParams, n: NoiseSpec, count: int,
                 separatrix: np.ndarray | None = None,
                 store_every: int = 0):
    """Independent realizations with derived streams, plus tip statistics.

    The statistics aggregate the first basin crossing per realization in the
    direction implied by the starting basin (O -> S when starting in the
    non-storm basin, S -> O otherwise).  Paths are only kept when
    store_every > 0; detection always runs at full resolution.
    """
    if separatrix is None:
        separatrix = separatrix_polyline(p)
    x0 = np.asarray(x0, dtype=float)
    start_side = separatrix_side(x0, separatrix)
    expected = "O_to_S" if start_side < 0 else "S_to_O"
    finals, events, taus, paths, coverage = _simulate_batch(
        x0, p, n, list(range(count)), store_every=store_every,
        separatrix=separatrix)
    times = _first_tip_times(events, expected)
    stats = EnsembleStats(
        n_realizations=count,
        n_tipped=len(times),
        tip_fraction=len(times) / count,
        tip_time_mean=float(np.mean(times)) if times else None,
        tip_time_median=float(np.median(times)) if times else None,
    )
    out = {"stats": stats, "events": events, "finals": finals,
           "coverage_exceeded": coverage, "direction": expected}
    if store_every > 0:
        out["taus"] = taus
        out["paths"] = paths
    return out


@dataclass
class CombinedResult:
    labels: list
    finals: np.ndarray
    min_dist_sminus: np.ndarray
    first_near_sminus_tau: np.ndarray   # nan when never within near_tol
    counts: dict
    s_final: float


def combined_rate_noise(x0, spec: RampSpec, gamma: float, n: NoiseSpec,
                        count: int, s0: float | None = None,
                        near_tol: float = 0.1) -> CombinedResult:
    """Euler-Maruyama on the ramped system (v, m, s) with noiseless clock.

    The drift is the reflected extension of the frozen field at the current
    clock, the clock starts at s0 (default -20/r, well before the ramp) and
    advances deterministically.  Realizations are classified at tau_f, after
    checking the ramp has saturated, against the frozen end-of-ramp
    equilibria by nearest equilibrium.  The minimum distance to S^- along
    the reflected path and the first time within near_tol of S^- support the
    tipping-then-tracking signature.
    """
    if s0 is None:
        s0 = -20.0 / spec.r if spec.r > 0 else 0.0
    n_steps = int(round(n.tau_f / n.dt))
    s_final = s0 + n_steps * n.dt
    if spec.r > 0 and ramp_value(s_final, spec) <= 1.0 - 1e-6:
        raise ValueError("horizon too short: ramp not saturated at tau_f "
                         f"(Lambda={ramp_value(s_final, spec):.8f})")
    start_fps = frozen_fixed_points(s0, spec, gamma)
    end_fps = frozen_fixed_points(s_final + 1e9, spec, gamma)
    if start_fps.storm is None or end_fps.storm is None:
        raise ValueError("combined run needs three equilibria at both ends")
    s_minus = start_fps.storm
    s_plus = end_fps.storm

    x0 = np.asarray(x0, dtype=float)
    v = np.full(count, x0[0])
    m = np.full(count, x0[1])
    gens = [_stream(n.seed, j) for j in range(count)]
    dt = n.dt
    g1 = 1.0 - gamma
    a1, a2 = n.sigma1 * math.sqrt(dt), n.sigma2 * math.sqrt(dt)
    min_d = np.hypot(v - s_minus[0], m - s_minus[1])
    first_near = np.where(min_d < near_tol, 0.0, np.nan)

    done = 0
    while done < n_steps:
        k = min(CHUNK_STEPS, n_steps - done)
        noise = np.empty((k, count, 2))
        for j, gen in enumerate(gens):
            noise[:, j, :] = gen.standard_normal((k, 2))
        for i in range(k):
            s = s0 + (done + i) * dt
            w, c12 = ramp_coefficients(s, spec)
            sv = np.where(v >= 0.0, 1.0, -1.0)
            sm = np.where(m >= 0.0, 1.0, -1.0)
            av = np.abs(v)
            am = np.abs(m)
            m3 = am * am * am
            f = g1 * w * w * m3 - (1.0 - gamma * m3) * av * av
            g = (1.0 - am) * av - c12 * am
            v = v + dt * (sv * f) + a1 * noise[i, :, 0]
            m = m + dt * (sm * g) + a2 * noise[i, :, 1]
            d = np.hypot(np.abs(v) - s_minus[0], np.abs(m) - s_minus[1])
            newly = (d < near_tol) & np.isnan(first_near)
            if np.any(newly):
                first_near[newly] = (done + i + 1) * dt
            np.minimum(min_d, d, out=min_d)
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(m))):
            raise RuntimeError("non-finite state in combined simulation")
        done += k

    finals = np.stack([np.abs(v), np.abs(m)], axis=-1)
    started_at_storm = (np.hypot(*(x0 - s_minus)) < np.hypot(x0[0], x0[1]))
    labels = []
    for pt in finals:
        d_o = np.hypot(pt[0], pt[1])
        d_s = np.hypot(*(pt - s_plus))
        near_storm = d_s < d_o
        if started_at_storm:
            labels.append("tracked_S_to_S" if near_storm else "tipped_S_to_O")
        else:
            labels.append("tipped_O_to_S" if near_storm else "stayed_O")
    counts = {}
    for lab in labels:
        counts[lab] = counts.get(lab, 0) + 1
    return CombinedResult(labels=labels, finals=finals,
                          min_dist_sminus=min_d,
                          first_near_sminus_tau=first_near,
                          counts=counts, s_final=s_final)
