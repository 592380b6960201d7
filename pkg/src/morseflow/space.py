"""Zero sets of polynomial systems inside a box, with tangent-space projection.

The working space is ``Z = {x : g(x) = 0}`` for a (possibly empty) polynomial
system ``g``, intersected with an axis-aligned box.  Nothing here assumes Z is
smooth: the tangent space at a point is the numerical null space of the
constraint Jacobian, with the effective rank cut at ``rank_tol`` relative to
the largest singular value.  Where the rank drops the null space simply grows;
callers that care about rank transitions can ask for the rank directly.

Membership is residual-based (``||g(x)|| <= tol`` and x inside the box), and
points are put back on Z by Gauss-Newton least-squares steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .polynomial import Polynomial, PolynomialSystem, gradient

__all__ = [
    "SingularSpace",
    "RetractionError",
    "LevelProjectionError",
    "riemannian_grad",
    "project_to_level_set",
]


class RetractionError(RuntimeError):
    """Gauss-Newton failed to bring the constraint residual below tolerance."""


class LevelProjectionError(RuntimeError):
    """Joint (constraint, level) projection failed to converge."""


@dataclass(frozen=True)
class SingularSpace:
    """``g^{-1}(0)`` restricted to a box.

    Parameters
    ----------
    ambient_dim : dimension n of the ambient space.
    constraints : polynomial system g (may be empty, giving Z = R^n in the box).
    box : per-coordinate (lo, hi) bounds; the numerical working region.
    rank_tol : relative singular-value cutoff for the effective rank of Dg.
    member_tol : residual tolerance used by ``is_member``.
    retract_tol : target residual for ``retract``.
    level_tol : target residual for ``project_to_level_set`` and level landings.
    """

    ambient_dim: int
    constraints: PolynomialSystem
    box: tuple[tuple[float, float], ...]
    rank_tol: float = 1e-8
    member_tol: float = 1e-8
    retract_tol: float = 1e-10
    level_tol: float = 1e-10

    def __post_init__(self):
        if len(self.constraints.variables) != self.ambient_dim:
            raise ValueError(
                f"constraints use {len(self.constraints.variables)} variables, ambient_dim is {self.ambient_dim}"
            )
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        if len(box) != self.ambient_dim:
            raise ValueError(f"box has {len(box)} intervals, expected {self.ambient_dim}")
        for lo, hi in box:
            if not lo < hi:
                raise ValueError(f"degenerate box interval ({lo}, {hi})")
        object.__setattr__(self, "box", box)

    @cached_property
    def box_diameter(self) -> float:
        spans = np.array([hi - lo for lo, hi in self.box])
        return float(np.linalg.norm(spans))

    @property
    def n_constraints(self) -> int:
        return len(self.constraints)

    # -- membership ----------------------------------------------------

    def residual(self, x: Sequence[float] | np.ndarray) -> float:
        """Euclidean norm of g(x); 0 for an unconstrained space."""
        if not len(self.constraints):
            return 0.0
        return float(np.linalg.norm(self.constraints.evaluate(np.asarray(x, dtype=float))))

    def inside_box(self, x: Sequence[float] | np.ndarray, margin: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        for xi, (lo, hi) in zip(x, self.box):
            if xi < lo + margin or xi > hi - margin:
                return False
        return True

    def is_member(self, x: Sequence[float] | np.ndarray, tol: float | None = None) -> bool:
        tol = self.member_tol if tol is None else tol
        return self.residual(x) <= tol and self.inside_box(x)

    # -- tangent structure ----------------------------------------------

    def constraint_jacobian(self, x: np.ndarray) -> np.ndarray:
        return self.constraints.jacobian_at(x)

    def effective_rank(self, x: Sequence[float] | np.ndarray) -> int:
        """Rank of Dg(x) with singular values below rank_tol * sigma_max dropped."""
        if not len(self.constraints):
            return 0
        J = self.constraint_jacobian(np.asarray(x, dtype=float))
        if len(self.constraints) == 1:
            sigma = float(np.linalg.norm(J[0]))
            return 1 if sigma > 0.0 else 0
        s = np.linalg.svd(J, compute_uv=False)
        smax = s[0] if s.size else 0.0
        if smax == 0.0:
            return 0
        return int(np.sum(s > self.rank_tol * smax))

    def tangent_project(self, x: Sequence[float] | np.ndarray, v: Sequence[float] | np.ndarray) -> np.ndarray:
        """Orthogonal projection of v onto the null space of Dg(x).

        At rank-deficient points the null space grows (at a fully degenerate
        Jacobian the projection is the identity).  The projection is
        idempotent by construction.
        """
        v = np.asarray(v, dtype=float)
        if not len(self.constraints):
            return v.copy()
        x = np.asarray(x, dtype=float)
        J = self.constraint_jacobian(x)
        if J.shape[0] == 1:
            row = J[0]
            s2 = float(row @ row)
            if s2 == 0.0:
                return v.copy()
            return v - row * (float(row @ v) / s2)
        U, s, Vt = np.linalg.svd(J)
        smax = s[0] if s.size else 0.0
        rank = 0 if smax == 0.0 else int(np.sum(s > self.rank_tol * smax))
        null_rows = Vt[rank:]
        return null_rows.T @ (null_rows @ v)

    # -- retraction ------------------------------------------------------

    def retract(self, x: Sequence[float] | np.ndarray, max_iter: int = 50) -> np.ndarray:
        """Pull x back onto Z by damped Gauss-Newton on g.

        Each step is the minimum-norm least-squares solution of
        ``Dg(x) d = g(x)``, halved until the residual does not increase.
        Raises :class:`RetractionError` when the residual is not below
        ``retract_tol`` after ``max_iter`` iterations.
        """
        x = np.array(x, dtype=float)
        if not len(self.constraints):
            return x
        g = self.constraints.evaluate(x)
        res = float(np.linalg.norm(g))
        for _ in range(max_iter):
            if res <= self.retract_tol:
                return x
            J = self.constraint_jacobian(x)
            d = self._min_norm_solve(J, g)
            lam = 1.0
            for _ in range(25):
                x_new = x - lam * d
                g_new = self.constraints.evaluate(x_new)
                res_new = float(np.linalg.norm(g_new))
                if res_new < res:
                    break
                lam *= 0.5
            else:
                raise RetractionError(f"no residual decrease from {res:.3e} at x = {x.tolist()}")
            x, g, res = x_new, g_new, res_new
        if res <= self.retract_tol:
            return x
        raise RetractionError(f"residual {res:.3e} > {self.retract_tol:.1e} after {max_iter} iterations")

    def _min_norm_solve(self, J: np.ndarray, r: np.ndarray) -> np.ndarray:
        if J.shape[0] == 1:
            row = J[0]
            s2 = float(row @ row)
            if s2 == 0.0:
                return np.zeros_like(row)
            return row * (float(r[0]) / s2)
        return np.linalg.lstsq(J, r, rcond=self.rank_tol)[0]


def riemannian_grad(f: Polynomial, Z: SingularSpace, x: Sequence[float] | np.ndarray) -> np.ndarray:
    """Ambient gradient of f projected onto the tangent space of Z at x."""
    x = np.asarray(x, dtype=float)
    amb = gradient(f).evaluate(x)
    return Z.tangent_project(x, amb)


def project_to_level_set(
    f: Polynomial,
    Z: SingularSpace,
    x: Sequence[float] | np.ndarray,
    c: float,
    max_iter: int = 60,
) -> np.ndarray:
    """Newton least-squares projection onto ``Z  ∩ {f = c}``.

    Solves the joint system ``g(x) = 0, f(x) - c = 0`` from the given start;
    the result satisfies ``is_member`` and ``|f - c| < level_tol``.  Raises
    :class:`LevelProjectionError` on non-convergence.
    """
    x = np.array(x, dtype=float)
    c = float(c)
    grad_f = gradient(f)

    def joint(p: np.ndarray) -> np.ndarray:
        g = Z.constraints.evaluate(p) if len(Z.constraints) else np.zeros(0)
        return np.concatenate([g, [f.evaluate(p) - c]])

    r = joint(x)
    res = float(np.linalg.norm(r))
    for _ in range(max_iter):
        if res <= Z.level_tol:
            return x
        J_g = Z.constraint_jacobian(x) if len(Z.constraints) else np.zeros((0, Z.ambient_dim))
        J = np.vstack([J_g, grad_f.evaluate(x)[None, :]])
        d = np.linalg.lstsq(J, r, rcond=Z.rank_tol)[0]
        lam = 1.0
        for _ in range(25):
            x_new = x + (-lam) * d
            r_new = joint(x_new)
            res_new = float(np.linalg.norm(r_new))
            if res_new < res:
                break
            lam *= 0.5
        else:
            raise LevelProjectionError(f"stalled at joint residual {res:.3e}")
        x, r, res = x_new, r_new, res_new
    if res <= Z.level_tol:
        return x
    raise LevelProjectionError(f"joint residual {res:.3e} > {Z.level_tol:.1e} after {max_iter} iterations")
