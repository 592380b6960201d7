"""Seeded sampling helpers shared by the estimation and checking modules.

Every random draw in the package flows from one integer seed through a
named substream, so a stage re-run on its own sees exactly the draws it
would see inside a full experiment.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .space import RetractionError, SingularSpace


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named stage, derived from the root seed."""
    key = int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "big")
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))


def unit_directions(dim: int, rng: np.random.Generator | None = None, n_random: int = 0) -> np.ndarray:
    """Probe directions: axes, coordinate-pair diagonals, full diagonals, then random.

    The deterministic head of the list keeps probe-based classification
    reproducible even when a retraction swallows most random directions
    (thin strata admit only a few escape routes).
    """
    dirs = []
    eye = np.eye(dim)
    for i in range(dim):
        dirs.append(eye[i].copy())
        dirs.append(-eye[i])
    for i in range(dim):
        for j in range(i + 1, dim):
            for si in (1.0, -1.0):
                for sj in (1.0, -1.0):
                    v = np.zeros(dim)
                    v[i] = si
                    v[j] = sj
                    dirs.append(v / np.sqrt(2.0))
    if 3 <= dim <= 6:
        for bits in range(2**dim):
            v = np.array([1.0 if (bits >> k) & 1 == 0 else -1.0 for k in range(dim)])
            dirs.append(v / np.sqrt(dim))
    if n_random > 0 and rng is not None:
        extra = rng.normal(size=(n_random, dim))
        norms = np.linalg.norm(extra, axis=1)
        for row, nr in zip(extra, norms):
            if nr > 1e-12:
                dirs.append(row / nr)
    return np.array(dirs)


def _dedupe(points, tol: float):
    kept = []
    for p in points:
        if all(np.linalg.norm(p - q) > tol for q in kept):
            kept.append(p)
    return kept


def ring_probes(
    Z: SingularSpace,
    center,
    radius: float,
    rng: np.random.Generator | None = None,
    n_random: int = 0,
    require_in_box: bool = True,
):
    """Points of Z at distance ~radius from center.

    Sends probe directions out, retracts, rescales back to the target
    distance and retracts once more.  Directions the retraction collapses
    toward the center (normal directions at a singular point) are dropped,
    so the survivors genuinely chart the local strata.
    """
    center = np.asarray(center, dtype=float)
    out = []
    for d in unit_directions(center.size, rng, n_random):
        try:
            p = Z.retract(center + radius * d)
        except RetractionError:
            continue
        dist = np.linalg.norm(p - center)
        if dist < 0.25 * radius:
            continue
        try:
            p = Z.retract(center + (radius / dist) * (p - center))
        except RetractionError:
            continue
        dist = np.linalg.norm(p - center)
        if dist < 0.5 * radius or dist > 1.5 * radius:
            continue
        if require_in_box and not Z.inside_box(p):
            continue
        out.append(p)
    return _dedupe(out, 1e-6 * radius)


def ball_probes(
    Z: SingularSpace,
    center,
    radius: float,
    rng: np.random.Generator,
    count: int,
    oversample: int = 8,
):
    """Up to count points of Z inside the closed radius-ball around center.

    Draws uniformly from the ambient ball and retracts; the center itself
    (and anything the retraction pins to it) is excluded.
    """
    center = np.asarray(center, dtype=float)
    n = center.size
    out = []
    attempts = 0
    budget = oversample * count + 64
    while len(out) < count and attempts < budget:
        attempts += 1
        d = rng.normal(size=n)
        nd = np.linalg.norm(d)
        if nd < 1e-12:
            continue
        r = radius * rng.uniform() ** (1.0 / n)
        try:
            p = Z.retract(center + (r / nd) * d)
        except RetractionError:
            continue
        dist = np.linalg.norm(p - center)
        if 1e-6 * radius < dist <= radius and Z.inside_box(p):
            out.append(p)
    return out


def gaussian_cloud(
    Z: SingularSpace,
    center,
    radius: float,
    rng: np.random.Generator,
    count: int,
    max_draws: int | None = None,
):
    """Rejection sampler: ambient Gaussian around center, retract, keep in-ball hits."""
    center = np.asarray(center, dtype=float)
    n = center.size
    if max_draws is None:
        max_draws = 40 * count + 200
    out = []
    draws = 0
    while len(out) < count and draws < max_draws:
        draws += 1
        x = center + (0.5 * radius) * rng.normal(size=n)
        try:
            p = Z.retract(x)
        except RetractionError:
            continue
        if np.linalg.norm(p - center) <= radius:
            out.append(p)
    return out


def band_samples(f, Z: SingularSpace, a: float, b: float, rng: np.random.Generator,
                 count: int, margin_frac: float = 0.9, max_draws: int | None = None):
    """Points of Z in the margin-shrunk box with f strictly inside (a, b).

    margin_frac < 1 keeps samples away from the box walls; flows from wall
    points would leave the box immediately and say nothing about the band.
    """
    if max_draws is None:
        max_draws = 200 * count + 500
    lows = np.array([lo for lo, _ in Z.box])
    highs = np.array([hi for _, hi in Z.box])
    mid = 0.5 * (lows + highs)
    half = 0.5 * (highs - lows) * margin_frac
    out = []
    draws = 0
    while len(out) < count and draws < max_draws:
        draws += 1
        x = mid + half * rng.uniform(-1.0, 1.0, size=Z.ambient_dim)
        try:
            p = Z.retract(x)
        except RetractionError:
            continue
        if not all(abs(p - mid) <= half + 1e-12):
            continue
        val = float(f.evaluate(p))
        if a < val < b:
            out.append(p)
    return out
