"""Level-to-level transport along the flow, and the empirical condition checks.

The flow carries one level set of f onto another; between critical values
that transport is invertible, and approaching a critical level it
degenerates exactly on the stable set.  This module realizes the
transport map, samples unstable-set slices, and runs the compactness and
landing-modulus checks against them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .critical import CLUSTER_TOL, ConditionReport, CriticalPoint
from .flow import (
    ArcBudget,
    Converged,
    INCONCLUSIVE_TERMINATIONS,
    ReachLevel,
    ascend_to_level,
    descend_to_level,
    integrate,
)
from .sampling import ball_probes, band_samples, ring_probes, substream
from .space import LevelProjectionError, SingularSpace, project_to_level_set

log = logging.getLogger(__name__)

SLICE_CLUSTER_TOL = 10.0 * CLUSTER_TOL


@dataclass(frozen=True)
class LevelPair:
    """One transported source: where it landed, how far it travelled."""

    source: tuple
    image: tuple
    arc: float
    captured: bool
    termination: str


@dataclass
class LevelSetMap:
    level_from: float
    level_to: float
    pairs: list

    @property
    def images(self):
        return [p.image for p in self.pairs if not p.captured and p.termination in ("reach_level", "identity")]

    @property
    def n_captured(self):
        return sum(1 for p in self.pairs if p.captured)

    @property
    def n_inconclusive(self):
        return sum(1 for p in self.pairs if p.termination in INCONCLUSIVE_TERMINATIONS)


@dataclass
class UnstableSlice:
    """Validated landings of flows leaving a critical point, on one level."""

    critical_point: CriticalPoint
    level: float
    points: list


def level_map(f, Z: SingularSpace, a: float, b: float, sources, control=None) -> LevelSetMap:
    """Transport points of f^{-1}(a) to f^{-1}(b) along the flow.

    Direction follows the sign of b - a.  Captured trajectories (converged
    before the target level) are flagged, not errors; their image is the
    numerical limit point.  Budget-terminated pairs keep their termination
    string so callers can report them.
    """
    pairs = []
    for i, s in enumerate(sources):
        s = np.asarray(s, dtype=float)
        if not Z.is_member(s):
            raise ValueError(f"source {i} is not on Z (residual {Z.residual(s):.3g})")
        if abs(float(f.evaluate(s)) - a) > Z.level_tol:
            raise ValueError(f"source {i} is not on the starting level {a}")
        if b == a:
            pairs.append(LevelPair(tuple(s), tuple(s), 0.0, False, "identity"))
            continue
        mover = ascend_to_level if b > a else descend_to_level
        traj = mover(f, Z, s, b, control=control)
        pairs.append(
            LevelPair(
                source=tuple(float(v) for v in s),
                image=tuple(float(v) for v in traj.endpoint),
                arc=float(traj.total_arc),
                captured=bool(traj.captured),
                termination=traj.termination,
            )
        )
    return LevelSetMap(level_from=float(a), level_to=float(b), pairs=pairs)


def roundtrip_error(f, Z: SingularSpace, a: float, b: float, sources, control=None) -> float:
    """Max displacement after transporting a -> b -> a, over non-captured sources.

    Small values witness invertibility of the transport; meaningful only
    when no critical value separates the levels (otherwise the number is
    still reported and documents where invertibility dies).
    """
    if a == b:
        return 0.0
    fwd = level_map(f, Z, a, b, sources, control=control)
    worst = 0.0
    live = [(np.asarray(p.source), np.asarray(p.image)) for p in fwd.pairs
            if not p.captured and p.termination == "reach_level"]
    if not live:
        return 0.0
    back = level_map(f, Z, b, a, [img for _, img in live], control=control)
    for (src, _), pair in zip(live, back.pairs):
        if pair.captured or pair.termination != "reach_level":
            continue
        worst = max(worst, float(np.linalg.norm(np.asarray(pair.image) - src)))
    return worst


def unstable_slice(
    f,
    Z: SingularSpace,
    cp: CriticalPoint,
    level: float,
    n_points: int = 24,
    probe_radius: float = 1e-3,
    seed: int = 0,
    curvature_margin: float = 0.5,
    control=None,
) -> UnstableSlice:
    """Sample the downward-leaving flow of a critical point on a lower level.

    Probes on a small ring that sit genuinely below the critical value are
    descended to the level; landings are clustered, and each cluster
    representative must be validated by flowing back up to the critical
    point (an unstable-set point, flowed backward, returns to where it
    came from).  Minima are refused: nothing leaves them downward.
    """
    if level >= cp.value:
        raise ValueError(f"slice level {level} is not below the critical value {cp.value}")
    center = cp.point()
    rng = substream(seed, "unstable-slice")
    n_extra = max(0, n_points - 2 * Z.ambient_dim)
    probes = ring_probes(Z, center, probe_radius, rng, n_random=n_extra, require_in_box=False)
    cutoff = cp.value - curvature_margin * probe_radius**2
    starts = [p for p in probes if float(f.evaluate(p)) < cutoff]
    if not starts:
        raise ValueError(
            f"no descending directions at radius {probe_radius}; "
            "the critical point is a minimum (or the radius is too small)"
        )

    landings = []
    for p in starts:
        traj = descend_to_level(f, Z, p, level, control=control)
        if traj.termination == "reach_level":
            landings.append(traj.endpoint)
    if not landings:
        raise RuntimeError(f"no probe flow reached level {level}; slice is empty")

    reps: list[np.ndarray] = []
    for q in landings:
        if all(np.linalg.norm(q - r) > SLICE_CLUSTER_TOL for r in reps):
            reps.append(q)

    validated = []
    for rep in reps:
        up = ascend_to_level(f, Z, rep, cp.value, control=control)
        if up.termination not in ("reach_level", "converged"):
            log.warning("slice landing %s failed to flow back (%s)", rep, up.termination)
            continue
        dist = float(np.linalg.norm(up.endpoint - center))
        if dist > SLICE_CLUSTER_TOL and up.termination == "reach_level":
            # ride the flow into the fixed point: the level is reached a
            # touch away from it whenever the approach is asymptotic
            polish = integrate(
                f, Z, up.endpoint, direction="ascend",
                stops=[Converged(1e-8), ArcBudget(max(10.0 * dist, 1e-6))],
                control=control,
            )
            dist = min(dist, float(np.linalg.norm(polish.endpoint - center)))
        if dist <= SLICE_CLUSTER_TOL:
            validated.append(tuple(float(v) for v in rep))
        else:
            log.warning("slice landing %s flows back %.3g away from the critical point", rep, dist)
    if not validated:
        raise RuntimeError("no slice landing survived back-flow validation")
    validated.sort()
    return UnstableSlice(critical_point=cp, level=float(level), points=validated)


def check_condition2(
    f,
    Z: SingularSpace,
    a: float,
    b: float,
    n_samples: int = 200,
    seed: int = 0,
    conv_grad_tol: float = 1e-4,
    margin_frac: float = 0.9,
    control=None,
    collect=None,
) -> ConditionReport:
    """Compactness of the flow over the band (a, b).

    Every sampled point of Z with value inside the band must, in both flow
    directions, either reach the band edge or converge (with the limit
    still in the band).  Callers are responsible for choosing a and b away
    from critical values.  Budget or box exits leave the dichotomy
    undecided and make the verdict inconclusive.
    """
    if not a < b:
        raise ValueError(f"band requires a < b, got ({a}, {b})")
    rng = substream(seed, "cond2")
    samples = band_samples(f, Z, a, b, rng, n_samples, margin_frac=margin_frac)
    witnesses = {
        "band": [float(a), float(b)],
        "n_requested": int(n_samples),
        "n_samples": len(samples),
        "n_reach": 0,
        "n_converged": 0,
        "n_inconclusive": 0,
        "n_violations": 0,
        "terminations": {},
    }
    if not samples:
        witnesses["warning"] = "band misses Z inside the box; vacuous pass"
        log.warning("condition 2 on (%g, %g): no samples found", a, b)
        return ConditionReport(condition=2, verdict="pass", witnesses=witnesses)

    for p in samples:
        for direction, target in (("descend", a), ("ascend", b)):
            traj = integrate(
                f, Z, p, direction=direction,
                stops=[ReachLevel(target), Converged(conv_grad_tol)],
                control=control,
            )
            term = traj.termination
            if collect is not None:
                collect(f"cond2/{direction}/{term}", traj)
            witnesses["terminations"][term] = witnesses["terminations"].get(term, 0) + 1
            if term == "reach_level":
                witnesses["n_reach"] += 1
            elif term == "converged":
                witnesses["n_converged"] += 1
                limit_val = float(traj.final_f)
                if not (a - Z.level_tol <= limit_val <= b + Z.level_tol):
                    witnesses["n_violations"] += 1
            else:
                witnesses["n_inconclusive"] += 1

    if witnesses["n_violations"]:
        verdict = "fail"
    elif witnesses["n_inconclusive"]:
        verdict = "inconclusive"
    else:
        verdict = "pass"
    return ConditionReport(condition=2, verdict=verdict, witnesses=witnesses)


def check_condition4(
    f,
    Z: SingularSpace,
    cp: CriticalPoint,
    eps: float,
    slice_: UnstableSlice,
    radii=(0.1, 0.03, 0.01, 0.003),
    n_per_radius: int = 40,
    tube_rho: float = 0.05,
    seed: int = 0,
    monotone_slack: float = 0.1,
    control=None,
    collect=None,
) -> ConditionReport:
    """Landing modulus: flows from shrinking balls land ever closer to the slice.

    For each radius r, on-Z probes within r of the critical point are
    descended to the slice level; d(r) is the worst distance from a
    landing to the nearest slice point.  Probes captured by the critical
    level itself (converged at value >= cp.value - eps/2) are the
    stable-set exclusion and are counted, not scored.  Verdict passes when
    d is non-increasing within the slack and the smallest radius lands
    inside the tube.
    """
    if cp.kind == "minimum":
        raise ValueError("landing modulus needs a non-minimal critical point")
    if any(r2 >= r1 for r1, r2 in zip(radii, radii[1:])):
        raise ValueError(f"radii must be strictly decreasing, got {tuple(radii)}")
    target = cp.value - eps
    if abs(slice_.level - target) > 1e-9:
        raise ValueError(f"slice level {slice_.level} does not match cp.value - eps = {target}")
    capture_level = cp.value - eps / 2.0
    center = cp.point()
    slice_pts = np.asarray(slice_.points, dtype=float)

    table = []
    witnesses = {
        "eps": float(eps),
        "level": float(target),
        "tube_rho": float(tube_rho),
        "capture_level": float(capture_level),
        "slice_size": len(slice_.points),
        "n_other_converged": 0,
        "n_inconclusive": 0,
        "n_projected": 0,
    }
    degenerate = False
    for idx, r in enumerate(radii):
        rng = substream(seed, f"cond4-radius-{idx}")
        probes = ball_probes(Z, center, r, rng, n_per_radius)
        kept = []
        for p in probes:
            # the proof walks a sequence on the critical level itself;
            # cover that variant where the level set is nondegenerate
            try:
                q = project_to_level_set(f, Z, p, cp.value)
                qd = float(np.linalg.norm(q - center))
                if CLUSTER_TOL < qd <= 2.0 * r:
                    kept.append(q)
                    witnesses["n_projected"] += 1
                    continue
            except LevelProjectionError:
                pass
            kept.append(np.asarray(p))

        n_landed = n_captured = 0
        worst = 0.0
        for p in kept:
            traj = descend_to_level(f, Z, p, target, control=control)
            if collect is not None:
                collect(f"cond4/r={r:g}/{traj.termination}", traj)
            if traj.termination == "reach_level":
                n_landed += 1
                d_i = float(np.min(np.linalg.norm(slice_pts - traj.endpoint[None, :], axis=1)))
                worst = max(worst, d_i)
            elif traj.termination == "converged":
                if float(traj.final_f) >= capture_level:
                    n_captured += 1
                else:
                    witnesses["n_other_converged"] += 1
            else:
                witnesses["n_inconclusive"] += 1
        if n_landed == 0:
            degenerate = True
            log.warning("radius %g: no probe landed (captured %d of %d)", r, n_captured, len(kept))
        table.append([float(r), float(worst), int(n_landed), int(n_captured)])

    if degenerate:
        verdict = "inconclusive"
    else:
        ds = [row[1] for row in table]
        # absolute floor: when flows collapse onto the slice exactly, the
        # measured distances are integrator noise and must not order-compare
        monotone = all(d2 <= d1 * (1.0 + monotone_slack) + 1e-8 for d1, d2 in zip(ds, ds[1:]))
        verdict = "pass" if monotone and ds[-1] < tube_rho else "fail"
        witnesses["d_final"] = ds[-1]
        witnesses["monotone_within_slack"] = bool(monotone)
    return ConditionReport(condition=4, verdict=verdict, witnesses=witnesses, modulus_table=table)
