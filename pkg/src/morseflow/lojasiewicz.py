"""Power-law lower envelope of the gradient near a critical point.

Close to a critical point with value c the projected gradient dominates a
power of the value gap: grad_norm(y) >= C * |c - f(y)|^(1 - theta).  This
module estimates (C, theta) from on-Z samples, derives the level offset
and arc-length bound that the estimate licenses, and verifies the implied
inequalities along actual flow trajectories.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .critical import CLUSTER_TOL, CriticalPoint
from .flow import descend_to_level
from .polynomial import gradient
from .sampling import gaussian_cloud, substream
from .space import SingularSpace

log = logging.getLogger(__name__)

CHECK_SLACK = 0.05
THETA_MIN = 0.05
THETA_MAX = 0.95
N_BINS = 30
MIN_SAMPLES = 100


class FitError(RuntimeError):
    """Raised when the sampled cloud does not support a power-law envelope."""

    def __init__(self, message, measured_slope=None):
        super().__init__(message)
        self.measured_slope = measured_slope


@dataclass(frozen=True)
class LojasiewiczFit:
    """Fitted envelope: grad_norm >= constant_C * |critical_value - f|^(1-theta).

    Valid on the ball of radius_delta around the critical point it was
    fitted at.  envelope_slack is the largest relative violation of the
    inequality over the fitting samples (0 once the constant is lowered to
    clear every sample); holdout_pass_fraction is measured on a fresh
    draw.
    """

    theta: float
    constant_C: float
    radius_delta: float
    critical_value: float
    n_samples: int
    envelope_slack: float
    holdout_pass_fraction: float

    def to_payload(self) -> dict:
        return {
            "theta": float(self.theta),
            "C": float(self.constant_C),
            "delta": float(self.radius_delta),
            "critical_value": float(self.critical_value),
            "n_samples": int(self.n_samples),
            "envelope_slack": float(self.envelope_slack),
            "holdout_pass_fraction": float(self.holdout_pass_fraction),
        }


def _sample_cloud(f, Z, cp, radius, n_samples, rng):
    """On-Z samples in the radius ball with a usable value gap, as (u, v) logs."""
    pts = gaussian_cloud(Z, cp.point(), radius, rng, n_samples)
    us, vs = [], []
    grad_sys = gradient(f)
    c = float(f.evaluate(cp.point()))
    for p in pts:
        gap = abs(c - float(f.evaluate(p)))
        if gap <= 1e-14:
            continue
        gn = float(np.linalg.norm(Z.tangent_project(p, grad_sys.evaluate(p))))
        if gn < 1e-300:
            continue
        us.append(np.log(gap))
        vs.append(np.log(gn))
    return np.array(us), np.array(vs), c


def estimate_fit(
    f,
    Z: SingularSpace,
    cp: CriticalPoint,
    radius: float,
    n_samples: int = 400,
    seed: int = 0,
) -> LojasiewiczFit:
    """Fit the envelope exponent and constant from a sampled cloud.

    The inequality is a lower bound, so an ordinary regression through the
    cloud would overestimate C and corrupt theta.  Instead: bin u =
    log|c - f| into quantile bins, take the minimum v = log grad_norm per
    bin, put a least-squares line through those minima, then lower the
    intercept until every sample clears the line.  theta = 1 - slope.
    """
    rng = substream(seed, "loja-fit")
    u, v, c = _sample_cloud(f, Z, cp, radius, n_samples, rng)
    if u.size < MIN_SAMPLES:
        raise FitError(f"only {u.size} usable on-Z samples (need {MIN_SAMPLES}); "
                       "radius too small or stratum too thin")

    edges = np.quantile(u, np.linspace(0.0, 1.0, N_BINS + 1))
    mins_u, mins_v = [], []
    for k in range(N_BINS):
        if k < N_BINS - 1:
            mask = (u >= edges[k]) & (u < edges[k + 1])
        else:
            mask = (u >= edges[k]) & (u <= edges[k + 1])
        if not np.any(mask):
            continue
        idx = np.argmin(v[mask])
        mins_u.append(u[mask][idx])
        mins_v.append(v[mask][idx])
    if len(mins_u) < 5:
        raise FitError(f"only {len(mins_u)} populated bins; value gaps too clustered")

    slope, intercept = np.polyfit(np.array(mins_u), np.array(mins_v), 1)
    theta = 1.0 - float(slope)
    if not (THETA_MIN <= theta <= THETA_MAX):
        raise FitError(
            f"fitted slope {slope:.4f} gives exponent {theta:.4f} outside "
            f"[{THETA_MIN}, {THETA_MAX}]; no usable power-law envelope at radius {radius}",
            measured_slope=float(slope),
        )

    # lower the line until it clears every fitting sample
    violation = np.max(intercept + slope * u - v)
    shift = max(0.0, float(violation))
    constant = float(np.exp(intercept - shift))

    fitted = constant * np.exp((1.0 - theta) * u)
    actual = np.exp(v)
    slack = float(np.max(np.maximum(0.0, fitted - actual) / actual))

    hold_rng = substream(seed, "loja-holdout")
    hu, hv, _ = _sample_cloud(f, Z, cp, radius, max(200, n_samples // 2), hold_rng)
    if hu.size:
        h_fit = constant * np.exp((1.0 - theta) * hu)
        h_act = np.exp(hv)
        frac = float(np.mean(h_act >= h_fit * (1.0 - CHECK_SLACK)))
    else:
        frac = float("nan")

    return LojasiewiczFit(
        theta=theta,
        constant_C=constant,
        radius_delta=float(radius),
        critical_value=c,
        n_samples=int(u.size),
        envelope_slack=slack,
        holdout_pass_fraction=frac,
    )


def choose_epsilon(fit: LojasiewiczFit, safety: float, nearest_gap: float | None = None) -> float:
    """Level offset licensed by the fit: eps = safety * (C*theta*delta/2)^(1/theta).

    Guarantees length_bound(fit, eps) = safety^theta * delta/2 < delta/2
    for safety < 1.  Optionally validated against the spacing to the next
    critical value (no other critical value may sit inside the offset).
    """
    if not (0.0 <= safety <= 1.0):
        raise ValueError(f"safety must lie in [0, 1], got {safety}")
    if not (0.0 < fit.theta <= 1.0):
        raise ValueError(f"exponent {fit.theta} outside (0, 1]")
    eps = safety * (fit.constant_C * fit.theta * fit.radius_delta / 2.0) ** (1.0 / fit.theta)
    if nearest_gap is not None and eps > nearest_gap:
        raise ValueError(
            f"eps {eps:.6g} exceeds the spacing {nearest_gap:.6g} to the nearest "
            "other critical value; shrink delta"
        )
    return float(eps)


def length_bound(fit: LojasiewiczFit, eps: float) -> float:
    """Arc-length cap for flow lines descending from the critical level by eps."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    return float(eps**fit.theta / (fit.constant_C * fit.theta))


def verify_flow_estimates(
    f,
    Z: SingularSpace,
    cp: CriticalPoint,
    fit: LojasiewiczFit,
    eps: float,
    starts,
    check_slack: float = CHECK_SLACK,
    control=None,
) -> dict:
    """Descend each start by eps below the critical level and check the estimates.

    (i)   d/dt (c - f)^theta >= C*theta*grad_norm*(1 - slack) at interior samples;
    (ii)  arc(t) <= (c - f(y_t))^theta / (C*theta) * (1 + slack) at every sample;
    (iii) the endpoint stays within delta of the critical point.

    Captured trajectories (converged before the target level) are excluded
    from (ii)/(iii) and counted as stable-set evidence.  Minima are
    refused: there is no level below to descend to.
    """
    if cp.kind == "minimum":
        raise ValueError("critical point is a minimum; no descending side exists")
    c = fit.critical_value
    target = c - eps
    theta, C = fit.theta, fit.constant_C
    delta = fit.radius_delta
    center = cp.point()

    starts = [np.asarray(s, dtype=float) for s in starts]
    for i, s in enumerate(starts):
        if not Z.is_member(s):
            raise ValueError(f"start {i} is not on Z (residual {Z.residual(s):.3g})")
        if abs(float(f.evaluate(s)) - c) > Z.level_tol:
            raise ValueError(f"start {i} is not on the critical level")
        if float(np.linalg.norm(s - center)) <= CLUSTER_TOL:
            raise ValueError(f"start {i} coincides with the critical point; zero-length flow")

    n_captured = 0
    n_inconclusive = 0
    i_pass = i_total = 0
    i_worst = np.inf
    ii_traj_pass = 0
    ii_total_traj = 0
    ii_worst = 0.0
    iii_pass = 0
    iii_worst = 0.0
    arc_bound = length_bound(fit, eps)
    arc_worst = 0.0
    arc_pass = 0

    for s in starts:
        traj = descend_to_level(f, Z, s, target, control=control)
        if traj.termination not in ("reach_level", "converged"):
            n_inconclusive += 1
            continue

        w = np.maximum(c - traj.f, 0.0) ** theta
        for k in range(1, traj.n_samples - 1):
            dt = traj.t[k + 1] - traj.t[k - 1]
            if dt <= 0:
                continue
            lhs = (w[k + 1] - w[k - 1]) / dt
            rhs = C * theta * traj.grad_norm[k]
            i_total += 1
            if lhs >= rhs * (1.0 - check_slack):
                i_pass += 1
            if rhs > 0:
                i_worst = min(i_worst, lhs / rhs)

        if traj.captured:
            n_captured += 1
            continue

        ii_total_traj += 1
        gaps = np.maximum(c - traj.f, 0.0)
        bounds = gaps**theta / (C * theta)
        ok = True
        for k in range(traj.n_samples):
            if bounds[k] <= 0.0:
                if traj.arc[k] > 1e-15:
                    ok = False
                continue
            ratio = traj.arc[k] / bounds[k]
            ii_worst = max(ii_worst, ratio)
            if ratio > 1.0 + check_slack:
                ok = False
        if ok:
            ii_traj_pass += 1

        total = float(traj.total_arc)
        arc_worst = max(arc_worst, total / arc_bound if arc_bound > 0 else np.inf)
        if total < arc_bound * (1.0 + check_slack):
            arc_pass += 1

        dist = float(np.linalg.norm(traj.endpoint - center))
        iii_worst = max(iii_worst, dist)
        if dist < delta:
            iii_pass += 1

    return {
        "n_starts": len(starts),
        "n_captured": n_captured,
        "n_inconclusive": n_inconclusive,
        "check_i": {
            "n_samples": i_total,
            "n_pass": i_pass,
            "pass_fraction": i_pass / i_total if i_total else float("nan"),
            "worst_ratio": float(i_worst) if i_total else float("nan"),
        },
        "check_ii": {
            "n_trajectories": ii_total_traj,
            "n_pass": ii_traj_pass,
            "pass_fraction": ii_traj_pass / ii_total_traj if ii_total_traj else float("nan"),
            "worst_ratio": float(ii_worst),
        },
        "check_iii": {
            "n_trajectories": ii_total_traj,
            "n_pass": iii_pass,
            "pass_fraction": iii_pass / ii_total_traj if ii_total_traj else float("nan"),
            "worst_distance": float(iii_worst),
            "delta": float(delta),
        },
        "total_arc": {
            "bound": float(arc_bound),
            "n_pass": arc_pass,
            "worst_ratio": float(arc_worst),
            "all_within": arc_pass == ii_total_traj,
        },
    }


def default_delta(Z: SingularSpace, cp: CriticalPoint, others=()) -> float:
    """Validity radius: half the spacing to the nearest other critical point,
    capped by the distance from the point to the box walls."""
    delta = min(min(c - lo, hi - c) for c, (lo, hi) in zip(cp.location, Z.box))
    p = cp.point()
    for other in others:
        d = float(np.linalg.norm(other.point() - p))
        if d > CLUSTER_TOL:
            delta = min(delta, d / 2.0)
    return float(delta)
