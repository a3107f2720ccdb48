"""One-body free energy psi(q) of a spin in a cascade-correlated Gaussian
field, its path derivative, and the closed form for the log partition
function of a purely Gaussian cascade.

Two genuinely independent backends are kept side by side: psi_eval runs
the deterministic nested-quadrature recursion, psi_mc simulates truncated
cascades directly.  Their agreement is the module's main correctness
argument and is asserted in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .cascade import _grow_log_weights
from .errors import BudgetExceeded, DegenerateBlock, ValidationError
from .paths import PiecewisePath, SignedPiecewisePath, sqrt_increments
from .util import chunked_thread_map, logsumexp, node_rng

__all__ = [
    "QuadratureSpec", "PsiResult", "psi_eval", "psi_mc", "psi_grad",
    "gaussian_cascade_logfree", "NODE_BUDGET",
]

NODE_BUDGET = 10 ** 7


@dataclass(frozen=True)
class QuadratureSpec:
    """Gauss-Hermite tensor quadrature; optional MC fallback.

    mc_fallback, when given, is a dict with keys "samples" and "seed"; it
    is used when the full tensor grid would exceed NODE_BUDGET innermost
    evaluations.
    """
    nodes_per_dim: int = 32
    mc_fallback: dict | None = None

    def __post_init__(self):
        if self.nodes_per_dim < 3:
            raise ValidationError("nodes_per_dim must be >= 3")


@dataclass(frozen=True)
class PsiResult:
    value: float
    method: str               # "quadrature" or "mc"
    error_estimate: float


@lru_cache(maxsize=32)
def _gh_nodes_1d(n):
    x, w = np.polynomial.hermite.hermgauss(n)
    return x * np.sqrt(2.0), np.log(w) - 0.5 * np.log(np.pi)


@lru_cache(maxsize=16)
def _gh_nodes(n, D):
    """Tensorized standard-normal nodes: points (n**D, D), log-weights."""
    x1, lw1 = _gh_nodes_1d(n)
    grids = np.meshgrid(*([x1] * D), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    lgrids = np.meshgrid(*([lw1] * D), indexing="ij")
    lws = sum(g.ravel() for g in lgrids)
    return pts, lws


def _atom_terms(P1, q_end, tilt):
    """Per-atom additive constants and the sqrt(2)-scaled atom matrix."""
    atoms = np.asarray(P1.atoms, dtype=float)
    logp = np.log(np.asarray(P1.weights, dtype=float))
    const = logp - np.einsum("ad,de,ae->a", atoms, q_end, atoms)
    if tilt is not None:
        tilt = np.asarray(tilt, dtype=float)
        const = const + np.einsum("ad,de,ae->a", atoms, tilt, atoms)
    return const, np.sqrt(2.0) * atoms.T


def _recursion(node_sets, logw_sets, zetas, roots, const, atoms_t, threads):
    """Evaluate the cascade recursion over explicit per-level node sets.

    node_sets[l] has shape (G_l, D); the innermost free-energy kernel is
    evaluated on the full product grid, then levels are collapsed inward
    with X_{l-1} = zeta_l^{-1} log E exp(zeta_l X_l) and a plain average
    at the root.  Returns X_0 values per outermost node, shape (G_0,).
    """
    K = len(node_sets) - 1
    contrib = [node_sets[l] @ roots[l].T for l in range(K + 1)]
    inner_sizes = tuple(len(node_sets[l]) for l in range(1, K + 1))
    inner_total = int(np.prod(inner_sizes)) if K else 1
    g0 = len(node_sets[0])
    chunk = max(1, min(g0, (1 << 20) // max(inner_total, 1)))
    starts = list(range(0, g0, chunk))

    def one_chunk(s0):
        idx = slice(s0, min(s0 + chunk, g0))
        c = idx.stop - idx.start
        arr = contrib[0][idx].reshape((c,) + (1,) * K + (-1,))
        for l in range(1, K + 1):
            shape = (1,) * l + (inner_sizes[l - 1],) + (1,) * (K - l) + (-1,)
            arr = arr + contrib[l].reshape(shape)
        a = arr.reshape(-1, arr.shape[-1]) @ atoms_t + const
        x = logsumexp(a, axis=1).reshape((c,) + inner_sizes)
        for l in range(K, 0, -1):
            x = logsumexp(logw_sets[l] + zetas[l] * x, axis=-1) / zetas[l]
        return x

    parts = chunked_thread_map(one_chunk, starts, threads)
    return np.concatenate(parts)


def psi_eval(P1, q, quad, tilt=None, threads=None) -> PsiResult:
    """psi(q) = -E X_0 by nested Gauss-Hermite over the cascade recursion.

    The optional PSD tilt adds +sigma.tilt.sigma inside the innermost
    kernel (used by the classic Parisi functional); with a tilt the
    result may be negative.
    """
    if not isinstance(q, PiecewisePath):
        raise ValidationError("q must be a PiecewisePath")
    roots = sqrt_increments(q)
    K, D = q.K, q.D
    const, atoms_t = _atom_terms(P1, q.final_value, tilt)
    n = quad.nodes_per_dim
    total = float(n) ** (D * (K + 1))
    if total > NODE_BUDGET:
        if quad.mc_fallback is None:
            raise BudgetExceeded(
                f"grid needs {total:.3g} evaluations, budget {NODE_BUDGET:g};"
                " supply mc_fallback or reduce nodes_per_dim")
        return _psi_sampled_levels(q, quad, roots, const, atoms_t, threads)
    pts, lws = _gh_nodes(n, D)
    node_sets = [pts] * (K + 1)
    logw_sets = [lws] * (K + 1)
    x0 = _recursion(node_sets, logw_sets, q.zetas, roots, const, atoms_t,
                    threads)
    value = -float(np.exp(lws) @ x0) + 0.0    # avoid -0.0 in reports
    return PsiResult(value, "quadrature", 0.0)


def _psi_sampled_levels(q, quad, roots, const, atoms_t, threads):
    """Budget fallback: equal-weight Monte Carlo node sets per level.

    Per-level sample counts are chosen to fit the evaluation budget (and
    capped by mc_fallback["samples"]).  The error estimate is the stderr
    over outermost nodes; noise from the shared inner-level samples is
    not included, so treat it as a lower bound.
    """
    K, D = q.K, q.D
    cap = int(quad.mc_fallback.get("samples", 10 ** 5))
    seed = int(quad.mc_fallback.get("seed", 0))
    per_level = max(8, min(cap, int(NODE_BUDGET ** (1.0 / (K + 1)))))
    rng = node_rng(seed, 9)
    node_sets = [rng.standard_normal((per_level, D)) for _ in range(K + 1)]
    logw_sets = [np.full(per_level, -np.log(per_level))] * (K + 1)
    x0 = _recursion(node_sets, logw_sets, q.zetas, roots, const, atoms_t,
                    threads)
    value = -float(x0.mean())
    stderr = float(x0.std(ddof=1) / np.sqrt(len(x0)))
    return PsiResult(value, "mc", stderr)


def psi_mc(P1, q, n_max, samples, seed, tilt=None, threads=None) -> PsiResult:
    """Direct-simulation backend: fresh truncated cascade and field per
    sample, free energy by summation over leaves and atoms.

    Shares only the cascade weight sampler and sqrt-increment helper with
    the quadrature backend; the estimate itself never runs the recursion.
    """
    if samples < 2:
        raise ValidationError("samples must be >= 2")
    roots = sqrt_increments(q)
    K, D = q.K, q.D
    if K > 0 and n_max < 2:
        raise ValidationError("n_max must be >= 2 when the path has steps")
    const, atoms_t = _atom_terms(P1, q.final_value, tilt)
    zi = q.zetas[1:]
    L = int(n_max) ** K
    chunk_samples = 256
    chunks = list(range(0, samples, chunk_samples))

    def one_chunk(start):
        rng = node_rng(seed, 4, start)
        count = min(chunk_samples, samples - start)
        out = np.empty(count)
        b_cap = max(1, (1 << 20) // L)
        done = 0
        while done < count:
            b = min(b_cap, count - done)
            if K > 0:
                logw, _ = _grow_log_weights(zi, n_max, rng, batch=b)
            else:
                logw = np.zeros((b, 1))
            field = np.zeros((b, L, D))
            for l in range(K + 1):
                z = rng.standard_normal((b, n_max ** l, D))
                field += np.repeat(z @ roots[l].T, L // n_max ** l, axis=1)
            a = field.reshape(-1, D) @ atoms_t + const
            g = logsumexp(a, axis=1).reshape(b, L)
            out[done:done + b] = logsumexp(logw + g, axis=1)
            done += b
        return out

    f = np.concatenate(chunked_thread_map(one_chunk, chunks, threads))
    value = -float(f.mean())
    stderr = float(f.std(ddof=1) / np.sqrt(samples))
    return PsiResult(value, "mc", stderr)


def _perturb_block(q, k, delta):
    """Path with values[k] shifted by delta, or None if not increasing."""
    vals = [v.copy() for v in q.values]
    vals[k] = vals[k] + delta
    try:
        return q.with_values(vals)
    except ValidationError:
        return None


def _perturb_tail(q, k, delta):
    """Path with values[m] shifted by delta for every m >= k."""
    vals = [v + delta if m >= k else v.copy()
            for m, v in enumerate(q.values)]
    try:
        return q.with_values(vals)
    except ValidationError:
        return None


def psi_grad(P1, q, quad, eps=1e-4, threads=None) -> SignedPiecewisePath:
    """Block gradient of psi by symmetric-basis finite differences.

    Per block k, the coefficient along each orthonormal symmetric basis
    direction is a central difference of psi_eval divided by the block
    length, shrinking eps (up to 4 halvings) and then falling back to a
    one-sided difference when a perturbed path leaves the increasing
    cone.  Blocks pinched between equal neighbours admit no single-block
    perturbation at all; those are resolved through one-sided bumps of
    the whole tail [zeta_k, 1) along PSD-shifted directions, which stay
    admissible because they move a single increment.
    """
    from .model import sym_basis

    lens = q.lengths()
    if np.any(lens < 1e-9):
        raise DegenerateBlock("block shorter than 1e-9")
    K, D = q.K, q.D
    basis = sym_basis(D)

    def val(path):
        return psi_eval(P1, path, quad, threads=threads).value

    base = None

    def base_val():
        nonlocal base
        if base is None:
            base = val(q)
        return base

    def tail_stencil(k, M, h):
        qp = _perturb_tail(q, k, h * M)
        if qp is None:
            raise ValidationError("tail perturbation left the cone")
        qp2 = _perturb_tail(q, k, 2 * h * M)
        if qp2 is None:
            return (val(qp) - base_val()) / h
        return (-3.0 * base_val() + 4.0 * val(qp) - val(qp2)) / (2 * h)

    def tail_one_sided(k, M, step):
        # Richardson pairing of two second-order one-sided stencils;
        # the O(step^2) terms cancel, leaving O(step^3) bias.
        d1 = tail_stencil(k, M, step)
        d2 = tail_stencil(k, M, 0.5 * step)
        return (4.0 * d2 - d1) / 3.0

    tail_id = {}
    tail_dir = {}

    def tail_id_deriv(k, step):
        # <grad, I on [zeta_k,1)>, cached per block
        if k not in tail_id:
            tail_id[k] = tail_one_sided(k, np.eye(D), step)
        return tail_id[k]

    def pinched_deriv(k, bi, b_mat, step):
        # directional tail derivative via the smallest PSD shift (large
        # shifts inflate the cubic stencil error), then the block value
        # is the difference of consecutive tail pairings, with the tail
        # derivatives cached so adjacent pinched blocks share them
        lam = max(0.0, -float(np.linalg.eigvalsh(b_mat)[0]))

        def tail_pair(kk):
            if kk > K:
                return 0.0
            if (kk, bi) not in tail_dir:
                shifted = tail_one_sided(kk, b_mat + lam * np.eye(D), step)
                if lam != 0.0:
                    shifted -= lam * tail_id_deriv(kk, step)
                tail_dir[(kk, bi)] = shifted
            return tail_dir[(kk, bi)]
        return (tail_pair(k) - tail_pair(k + 1)) / lens[k]

    blocks = []
    for k in range(K + 1):
        p_k = np.zeros((D, D))
        for bi, b_mat in enumerate(basis):
            coeff = None
            trial = eps
            for _ in range(5):
                step = trial
                qp = _perturb_block(q, k, step * b_mat)
                qm = _perturb_block(q, k, -step * b_mat)
                if qp is not None and qm is not None:
                    coeff = (val(qp) - val(qm)) / (2 * step * lens[k])
                    break
                trial *= 0.5
            if coeff is None:
                if qp is not None:
                    qp2 = _perturb_block(q, k, 2 * step * b_mat)
                    if qp2 is None:
                        coeff = (val(qp) - base_val()) / (step * lens[k])
                    else:
                        coeff = (-3.0 * base_val() + 4.0 * val(qp)
                                 - val(qp2)) / (2 * step * lens[k])
                elif qm is not None:
                    qm2 = _perturb_block(q, k, -2 * step * b_mat)
                    if qm2 is None:
                        coeff = (base_val() - val(qm)) / (step * lens[k])
                    else:
                        coeff = (3.0 * base_val() - 4.0 * val(qm)
                                 + val(qm2)) / (2 * step * lens[k])
                else:
                    coeff = pinched_deriv(k, bi, b_mat, eps)
            p_k += coeff * b_mat
        blocks.append(p_k)

    out = SignedPiecewisePath(q.zetas, blocks)
    incs = out.increments()
    for inc in incs[1:]:
        if np.linalg.eigvalsh(inc)[0] < -1e-5:
            raise ValidationError("gradient of psi failed the increasing "
                                  "post-check; refine the quadrature")
    for p_k in blocks:
        if np.linalg.norm(p_k) > 1.0 + 1e-6:
            raise ValidationError("gradient block norm exceeds 1")
    return out


def gaussian_cascade_logfree(zetas, tilde_theta) -> float:
    """Closed form for E log of a cascade-averaged Gaussian exponential.

    zetas = (s_0, ..., s_k) with s_0 = 0 < ... < s_k = 1 and tilde_theta
    the level values (theta-tilde of p_1 .. p_k); returns
    (tilde_theta_k - sum_l (s_l - s_{l-1}) tilde_theta_l) / 2.
    """
    s = np.asarray(zetas, dtype=float)
    tt = np.asarray(tilde_theta, dtype=float)
    if len(s) < 2 or abs(s[0]) > 1e-12 or abs(s[-1] - 1.0) > 1e-12:
        raise ValidationError("levels must run from 0 to 1")
    if np.any(np.diff(s) <= 0):
        raise ValidationError("levels must be strictly increasing")
    if len(tt) != len(s) - 1:
        raise ValidationError("need one value per level step")
    return float(0.5 * (tt[-1] - np.sum(np.diff(s) * tt)))
