"""Truncated Poisson-Dirichlet cascades, their Gaussian fields, and
overlap diagnostics (level law, Ghirlanda-Guerra residuals, ultrametric
tree reconstruction).

A depth-K cascade keeps the n_max largest atoms of each node's Poisson
process; leaf weights are the globally normalized products down the tree.
Level k of a leaf pair is the number of common ancestors (0 at the root
split, K for the same leaf), and the level-k time value is zeta_k with
zeta_0 = 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import NotUltrametric, PartitionMismatch, ValidationError
from .paths import sqrt_increments
from .util import logsumexp, node_rng

__all__ = [
    "CascadeSample", "CascadeField", "sample_cascade", "sample_field",
    "overlap_level_law", "OverlapLevelLaw", "gg_check", "GGCheckResult",
    "ultrametric_tree", "TreeNode", "tree_overlap_matrix",
]


def _check_zetas(zetas):
    zetas = np.asarray(zetas, dtype=float)
    if zetas.size and (np.any(np.diff(zetas) <= 0.0)
                       or zetas[0] <= 0.0 or zetas[-1] >= 1.0):
        raise ValidationError(
            "cascade levels must satisfy 0 < zeta_1 < ... < zeta_K < 1")
    return zetas


@dataclass(frozen=True, eq=False)
class CascadeSample:
    zetas: np.ndarray          # interior levels, shape (K,)
    n_max: int
    seed: int
    log_leaf_weights: np.ndarray
    truncation_ratio: float

    @property
    def K(self) -> int:
        return len(self.zetas)

    @property
    def n_leaves(self) -> int:
        return len(self.log_leaf_weights)

    def leaf_weights(self):
        return np.exp(self.log_leaf_weights)


def _grow_log_weights(zetas, n_max, rng, batch=None):
    """Log leaf weights for `batch` independent cascades (None: single).

    Returns (logw, ratio) with logw of shape (batch, n_max**K) and ratio
    the largest discarded-atom / retained-mass ratio seen at any node.
    """
    K = len(zetas)
    b = 1 if batch is None else batch
    logw = np.zeros((b, 1))
    ratio = 0.0
    for k in range(1, K + 1):
        n_parents = logw.shape[1]
        e = rng.exponential(size=(b, n_parents, n_max + 1))
        gam = np.cumsum(e, axis=2)
        log_u = -np.log(gam) / zetas[k - 1]
        kept = log_u[:, :, :n_max]
        spill = log_u[:, :, n_max] - logsumexp(kept, axis=2)
        ratio = max(ratio, float(np.exp(spill.max())))
        logw = (logw[:, :, None] + kept).reshape(b, -1)
    logw = logw - logsumexp(logw, axis=1, keepdims=True)
    if batch is None:
        return logw[0], ratio
    return logw, ratio


def sample_cascade(zetas, n_max, seed) -> CascadeSample:
    """Draw a truncated cascade with the given interior levels.

    Each node keeps the n_max largest atoms u_j of a Poisson process with
    intensity x^{-1-zeta} dx, realized as u_j proportional to
    Gamma_j^{-1/zeta} for partial sums Gamma_j of unit-rate exponentials
    (one extra atom is drawn per node for the truncation diagnostic).
    """
    zetas = _check_zetas(zetas)
    if len(zetas) and n_max < 2:
        raise ValidationError("n_max must be at least 2")
    if len(zetas) == 0:
        return CascadeSample(zetas, int(n_max), int(seed),
                             np.zeros(1), 0.0)
    rng = node_rng(seed, 0)
    logw, ratio = _grow_log_weights(zetas, n_max, rng)
    return CascadeSample(zetas, int(n_max), int(seed), logw, ratio)


@dataclass(frozen=True, eq=False)
class CascadeField:
    """Gaussian field over the leaves of a cascade for an increasing path.

    Node Gaussians are drawn lazily from counter-based streams keyed by
    (seed, level), so evaluation is reproducible and reentrant.  The field
    at a leaf is the sum of sqrt-increment-scaled node vectors along its
    ancestry, root included; columns are i.i.d. replicas.
    """

    cascade: CascadeSample
    q: object
    N: int
    seed: int

    def __post_init__(self):
        qz = np.asarray(self.q.zetas, dtype=float)
        cz = self.cascade.zetas
        if len(qz) != len(cz) + 1 or not np.allclose(qz[1:], cz, atol=1e-12):
            raise PartitionMismatch(
                f"path breakpoints {qz.tolist()} do not extend cascade "
                f"levels {cz.tolist()}")

    @cached_property
    def _roots(self):
        return sqrt_increments(self.q)

    @cached_property
    def all(self):
        """Field at every leaf, shape (n_leaves, D, N)."""
        casc, q = self.cascade, self.q
        total = np.zeros((casc.n_leaves, q.D, self.N))
        for level in range(casc.K + 1):
            n_nodes = casc.n_max ** level
            z = node_rng(self.seed, 1, level).standard_normal(
                (n_nodes, q.D, self.N))
            contrib = np.einsum("de,neb->ndb", self._roots[level], z)
            total += np.repeat(contrib, casc.n_leaves // n_nodes, axis=0)
        return total

    def leaf_field(self, leaf_index):
        return self.all[leaf_index]


def sample_field(cascade, q, N, seed) -> CascadeField:
    return CascadeField(cascade, q, int(N), int(seed))


def _pair_levels(leaf_a, leaf_b, n_max, K):
    """Common-ancestor count for leaf index pairs (vectorized)."""
    levels = np.zeros(np.broadcast(leaf_a, leaf_b).shape, dtype=int)
    for j in range(1, K + 1):
        div = n_max ** (K - j)
        levels += (leaf_a // div) == (leaf_b // div)
    return levels


def _gumbel_pick(logw, rng, count):
    """`count` independent categorical draws per row of logw."""
    b, L = logw.shape
    u = rng.random((count, b, L))
    picks = np.argmax(logw[None, :, :] - np.log(-np.log(u)), axis=2)
    return picks  # shape (count, b)


@dataclass(frozen=True)
class OverlapLevelLaw:
    freqs: np.ndarray
    stderrs: np.ndarray
    expected: np.ndarray
    draws: int
    truncation_ratio: float
    zetas: np.ndarray


def overlap_level_law(cascade, draws, seed,
                      resample_cascades=True) -> OverlapLevelLaw:
    """Empirical law of the common-ancestor level of a Gibbs leaf pair.

    With resample_cascades (default) every draw uses a fresh cascade with
    the same levels and truncation, so the frequencies estimate the
    ensemble law, which is zeta_{k+1} - zeta_k per level.  With
    resample_cascades=False all pairs come from the one passed-in sample;
    that conditional law is itself random and does not match the ensemble
    values.
    """
    if draws < 1:
        raise ValidationError("draws must be >= 1")
    K, n_max = cascade.K, cascade.n_max
    rng = node_rng(seed, 2)
    counts = np.zeros(K + 1)
    ratio = cascade.truncation_ratio
    L = max(cascade.n_leaves, 1)
    batch = max(1, min(draws, int(8e6) // L))
    done = 0
    while done < draws:
        b = min(batch, draws - done)
        if resample_cascades and K > 0:
            logw, r = _grow_log_weights(cascade.zetas, n_max, rng, batch=b)
            ratio = max(ratio, r)
        else:
            logw = np.broadcast_to(cascade.log_leaf_weights, (b, L))
        cum = np.cumsum(np.exp(logw), axis=1)
        cum[:, -1] = 1.0
        u = rng.random((2, b, 1))
        picks = np.argmax(u <= cum[None, :, :], axis=2)
        lv = _pair_levels(picks[0], picks[1], n_max, K)
        counts += np.bincount(lv, minlength=K + 1)
        done += b
    freqs = counts / draws
    stderrs = np.sqrt(np.clip(freqs * (1.0 - freqs), 0.0, None) / draws)
    expected = np.diff(np.concatenate([[0.0], cascade.zetas, [1.0]]))
    return OverlapLevelLaw(freqs, stderrs, expected, int(draws),
                           float(ratio), cascade.zetas.copy())


@dataclass(frozen=True)
class GGCheckResult:
    residual: float
    stderr: float
    truncation_bias: float
    n: int
    draws: int


def gg_check(cascade, f, n, draws, seed, tuples_per_cascade=8) -> GGCheckResult:
    """Ghirlanda-Guerra residual for a bounded overlap-array statistic.

    Estimates | E<f R^{1,n+1}> - (1/n) E<f> E<R^{1,2}>
                - (1/n) sum_{l=2..n} E<f R^{1,l}> |
    where R is the level-time overlap (level k maps to zeta_k, diagonal 1)
    and E averages over fresh cascades.  Per cascade, E<R^{1,2}> and the
    conditional mean of R^{1,n+1} given replica 1 are computed exactly
    from level masses; f-moments use sampled replica tuples.  The stderr
    comes from 20 batch means; truncation_bias is the worst discarded
    atom ratio seen, reported as an additive allowance.
    """
    if n < 2:
        raise ValidationError("n must be >= 2")
    if draws < 20:
        raise ValidationError("draws must be at least 20")
    K, n_max = cascade.K, cascade.n_max
    zet = np.concatenate([[0.0], cascade.zetas])   # level value map, k -> zeta_k
    rng = node_rng(seed, 3)
    n_casc = max(20, draws // tuples_per_cascade)
    groups = 20
    per_group = max(1, n_casc // groups)
    deltas = []
    ratio = 0.0
    for _ in range(groups):
        acc_t1 = acc_f = acc_r12 = 0.0
        acc_fl = np.zeros(max(n - 1, 1))
        count = 0
        for _ in range(per_group):
            if K > 0:
                logw, r = _grow_log_weights(cascade.zetas, n_max, rng, batch=1)
                logw = logw[0]
                ratio = max(ratio, r)
            else:
                logw = cascade.log_leaf_weights
            w = np.exp(logw)
            L = len(w)
            # mass sharing at least level j with each leaf, then B and E<R>
            share = np.empty((K + 2, L))
            share[0] = 1.0
            for j in range(1, K + 1):
                node_w = w.reshape(n_max ** j, -1).sum(axis=1)
                share[j] = np.repeat(node_w, L // (n_max ** j))
            share[K + 1] = 0.0
            exact_mass = share[:K + 1] - share[1:K + 2]
            b_leaf = zet @ exact_mass
            r12 = float(zet @ (exact_mass @ w))
            tup = _gumbel_pick(np.broadcast_to(logw, (tuples_per_cascade, L)),
                               rng, n)          # (n, tuples)
            for t in range(tuples_per_cascade):
                leaves = tup[:, t]
                lv = _pair_levels(leaves[:, None], leaves[None, :], n_max, K)
                rmat = zet[np.minimum(lv, K)]
                np.fill_diagonal(rmat, 1.0)
                fv = float(f(rmat))
                acc_t1 += fv * float(b_leaf[leaves[0]])
                acc_f += fv
                for l in range(1, n):
                    acc_fl[l - 1] += fv * rmat[0, l]
                count += 1
            acc_r12 += r12
        m_t1 = acc_t1 / count
        m_f = acc_f / count
        m_fl = acc_fl / count
        m_r12 = acc_r12 / per_group
        deltas.append(m_t1 - (m_f * m_r12 + float(m_fl.sum())) / n)
    deltas = np.asarray(deltas)
    return GGCheckResult(float(abs(deltas.mean())),
                         float(deltas.std(ddof=1) / np.sqrt(groups)),
                         float(max(ratio, cascade.truncation_ratio)),
                         int(n), int(draws))


@dataclass(frozen=True)
class TreeNode:
    level: float
    children: tuple
    leaf: int | None = None

    def leaves(self):
        if self.leaf is not None:
            return [self.leaf]
        out = []
        for c in self.children:
            out.extend(c.leaves())
        return out


def ultrametric_tree(overlaps, tol=1e-12) -> TreeNode:
    """Rooted tree whose leaf-pair merge levels reproduce the matrix.

    Requires a symmetric matrix with maximal diagonal satisfying the
    ultrametric inequality ov(i,k) >= min(ov(i,j), ov(j,k)) on every
    triple; raises NotUltrametric with a violating triple otherwise.
    """
    ov = np.asarray(overlaps, dtype=float)
    n = ov.shape[0]
    if ov.shape != (n, n) or float(np.max(np.abs(ov - ov.T))) > tol:
        raise NotUltrametric("overlap matrix must be symmetric")
    if np.any(np.diag(ov)[None, :] < ov - tol) :
        raise NotUltrametric("diagonal must dominate its column")
    lower = np.minimum(ov[:, :, None], ov[None, :, :])   # min(ov(i,j), ov(j,k))
    viol = ov[:, None, :] < lower - tol
    if viol.any():
        i, j, k = np.argwhere(viol)[0]
        raise NotUltrametric(
            f"triple ({i}, {j}, {k}) violates the min-inequality",
            triple=(int(i), int(j), int(k)))
    return _build_tree(ov, list(range(n)), tol)


def _build_tree(ov, idx, tol):
    if len(idx) == 1:
        i = idx[0]
        return TreeNode(float(ov[i, i]), (), leaf=i)
    sub = ov[np.ix_(idx, idx)]
    off = sub[~np.eye(len(idx), dtype=bool)]
    s = float(off.min())
    # classes of the (transitive, by ultrametricity) relation ov > s
    unassigned = list(idx)
    classes = []
    while unassigned:
        seed_leaf = unassigned.pop(0)
        cls = [seed_leaf]
        rest = []
        for j in unassigned:
            if ov[seed_leaf, j] > s + tol:
                cls.append(j)
            else:
                rest.append(j)
        unassigned = rest
        classes.append(cls)
    children = tuple(_build_tree(ov, cls, tol) for cls in classes)
    return TreeNode(s, children)


def tree_overlap_matrix(tree, n=None):
    """Inverse of ultrametric_tree on generated trees."""
    leaves = tree.leaves()
    if n is None:
        n = max(leaves) + 1
    ov = np.zeros((n, n))
    _fill_overlaps(tree, ov)
    return ov


def _fill_overlaps(node, ov):
    if node.leaf is not None:
        ov[node.leaf, node.leaf] = node.level
        return
    groups = [c.leaves() for c in node.children]
    for a in range(len(groups)):
        for b in range(a + 1, len(groups)):
            for i in groups[a]:
                for j in groups[b]:
                    ov[i, j] = ov[j, i] = node.level
    for c in node.children:
        _fill_overlaps(c, ov)
