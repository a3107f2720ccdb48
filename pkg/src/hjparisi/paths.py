"""Piecewise-constant matrix-valued paths on [0, 1) and their utilities.

A path is a step function u -> q(u) taking symmetric D x D values, with
breakpoints 0 = zeta_0 < zeta_1 < ... < zeta_K < 1 and value q_k on
[zeta_k, zeta_{k+1}).  The value at 1 is defined by continuity as q_K.
PiecewisePath additionally requires PSD increments q_k - q_{k-1} (with
q_{-1} = 0), i.e. the path is increasing in the PSD order from 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadBreakpoints, NotIncreasing, Singular
from .util import PSD_TOL, frob, psd_sqrt, sym

__all__ = [
    "SignedPiecewisePath",
    "PiecewisePath",
    "path_new",
    "signed_path_new",
    "common_refinement",
    "lp_distance",
    "dual_cone_member",
    "uniform_increase_check",
    "sqrt_increments",
    "sqrt_directional_derivative",
    "path_from_json_dict",
    "path_to_json_dict",
]


def _coerce_values(values):
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1, 1)
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise BadBreakpoints(
            f"values must have shape (K+1, D, D), got {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class SignedPiecewisePath:
    """Step function with unconstrained symmetric matrix values."""

    zetas: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        zetas = np.asarray(self.zetas, dtype=float)
        values = _coerce_values(self.values)
        if zetas.ndim != 1 or len(zetas) != len(values):
            raise BadBreakpoints(
                f"{len(zetas)} breakpoints for {len(values)} values")
        if len(zetas) == 0:
            raise BadBreakpoints("a path needs at least one block")
        if abs(zetas[0]) > 0.0:
            raise BadBreakpoints(f"zeta_0 must be 0, got {zetas[0]}")
        if np.any(np.diff(zetas) <= 0.0) or zetas[-1] >= 1.0:
            raise BadBreakpoints(
                "breakpoints must be strictly increasing inside [0, 1)")
        asym = float(np.max(np.abs(values - sym(values)))) if values.size else 0.0
        if asym > 1e-9:
            raise BadBreakpoints(f"values must be symmetric (deviation {asym:.2e})")
        object.__setattr__(self, "zetas", zetas)
        object.__setattr__(self, "values", sym(values))

    @property
    def K(self) -> int:
        return len(self.zetas) - 1

    @property
    def D(self) -> int:
        return self.values.shape[1]

    def lengths(self):
        """Block lengths; the last block runs to 1."""
        return np.diff(np.append(self.zetas, 1.0))

    def increments(self):
        """q_k - q_{k-1} with q_{-1} = 0, shape (K+1, D, D)."""
        return np.diff(self.values, axis=0, prepend=np.zeros((1, self.D, self.D)))

    def value_at(self, u):
        if u >= 1.0:
            return self.values[-1].copy()
        k = int(np.searchsorted(self.zetas, u, side="right")) - 1
        return self.values[max(k, 0)].copy()

    @property
    def final_value(self):
        return self.values[-1].copy()

    def with_values(self, values):
        return type(self)(self.zetas.copy(), values)


class PiecewisePath(SignedPiecewisePath):
    """Increasing step path: all increments PSD within tolerance."""

    def __post_init__(self):
        super().__post_init__()
        incs = self.increments()
        for k, inc in enumerate(incs):
            lam = float(np.linalg.eigvalsh(inc)[0])
            if lam < -PSD_TOL:
                raise NotIncreasing(
                    f"increment {k} has eigenvalue {lam:.3e} below -{PSD_TOL:.0e}")


def path_new(zetas, values) -> PiecewisePath:
    """Validated increasing path, or BadBreakpoints / NotIncreasing."""
    return PiecewisePath(np.asarray(zetas, dtype=float), values)


def signed_path_new(zetas, values) -> SignedPiecewisePath:
    return SignedPiecewisePath(np.asarray(zetas, dtype=float), values)


def common_refinement(q, q_prime):
    """Rewrite both paths on the union of their breakpoints."""
    merged = np.union1d(q.zetas, q_prime.zetas)
    return _on_partition(q, merged), _on_partition(q_prime, merged)


def _on_partition(path, zetas):
    idx = np.searchsorted(path.zetas, zetas, side="right") - 1
    return type(path)(zetas, path.values[np.clip(idx, 0, path.K)])


def refine_all(paths):
    merged = paths[0].zetas
    for p in paths[1:]:
        merged = np.union1d(merged, p.zetas)
    return [_on_partition(p, merged) for p in paths]


def lp_distance(q, q_prime, p=2.0) -> float:
    """Exact L^p([0,1]) distance of two step paths, Frobenius pointwise."""
    a, b = common_refinement(q, q_prime)
    diffs = np.linalg.norm(a.values - b.values, axis=(1, 2))
    lens = a.lengths()
    if np.isinf(p):
        return float(diffs.max())
    return float(np.sum(lens * diffs ** p) ** (1.0 / p))


def dual_cone_member(kappa, tol=PSD_TOL) -> bool:
    """Whether every tail integral of the signed path is PSD.

    The tail integral over [t, 1] is linear in t inside each block, so it
    is enough to check it at each breakpoint.
    """
    lens = kappa.lengths()
    tail = np.zeros((kappa.D, kappa.D))
    for k in range(kappa.K, -1, -1):
        tail = tail + lens[k] * kappa.values[k]
        if float(np.linalg.eigvalsh(sym(tail))[0]) < -tol:
            return False
    return True


def uniform_increase_check(q, c, ramp_slope=0.0, tol=1e-9) -> bool:
    """Check uniform increase of the composite u -> q(u) + ramp_slope*u*Id.

    Membership requires q(0) = 0 and, for every u <= v, that the composite
    increment dominates c*(v-u)*Id and has largest/smallest eigenvalue
    ratio at most 1/c.  Both conditions are monotone along blocks, so
    checking the closed gap interval endpoints of each block pair is
    exhaustive for step paths.  A pure step path (ramp_slope = 0) always
    fails the lower bound within a block.
    """
    if c <= 0.0:
        raise ValueError("c must be positive")
    if frob(q.values[0]) > tol:
        return False
    z = np.append(q.zetas, 1.0)
    s = float(ramp_slope)
    for i in range(q.K + 1):
        for j in range(i, q.K + 1):
            delta = q.values[j] - q.values[i]
            lam = np.linalg.eigvalsh(sym(delta))
            lo, hi = float(lam[0]), float(lam[-1])
            x_min = max(0.0, z[j] - z[i + 1])
            x_max = z[j + 1] - z[i]
            for x in (x_min, x_max):
                if lo + (s - c) * x < -tol:
                    return False
            # eigenvalue-ratio condition, worst at the smallest gap
            if hi + s * x_min > (lo + s * x_min) / c + tol:
                return False
    return True


def sqrt_increments(q):
    """Principal square roots of the increments of an increasing path."""
    try:
        return [psd_sqrt(inc, clip_tol=PSD_TOL) for inc in q.increments()]
    except ValueError as exc:
        raise NotIncreasing(str(exc)) from exc


def sqrt_directional_derivative(h, a):
    """Derivative of the matrix square root at h in direction a.

    Solves sqrt(h) X + X sqrt(h) = a for the symmetric X; requires h
    positive definite.  Satisfies |X| <= |a| / (2 sqrt(lambda_min(h))).
    """
    h = sym(np.asarray(h, dtype=float))
    a = sym(np.asarray(a, dtype=float))
    lam, vec = np.linalg.eigh(h)
    if lam[0] <= 1e-12:
        raise Singular(f"h must be positive definite (min eigenvalue {lam[0]:.3e})")
    root = np.sqrt(lam)
    b = vec.T @ a @ vec
    x = b / (root[:, None] + root[None, :])
    return sym(vec @ x @ vec.T)


def path_from_json_dict(d):
    """Path from {"zetas": [...], "values": [[[...]], ...]} (row-major)."""
    return path_new(d["zetas"], d["values"])


def path_to_json_dict(path):
    return {"zetas": [float(z) for z in path.zetas],
            "values": [[[float(x) for x in row] for row in v] for v in path.values]}
