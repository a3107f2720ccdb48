"""Covariance polynomials on D x D matrices and reference spin measures.

A model is a finite sum xi(a) = sum_p <C_p, a tensor-power p> with each
C_p a symmetric PSD matrix of shape (D^p, D^p), indexed so that
a^{tensor p} = kron(a, ..., a).  The reference measure is a finite atomic
probability measure on the closed unit ball of R^D.
"""

from __future__ import annotations

import string
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import NonConvergence, ValidationError
from .util import frob, project_psd, sym

MAX_DEGREE = 4
MAX_DIM = 4
_LETTERS = string.ascii_lowercase


@dataclass(frozen=True, eq=False)
class XiModel:
    D: int
    terms: tuple

    def __post_init__(self):
        if not (1 <= self.D <= MAX_DIM):
            raise ValidationError(f"D must be in 1..{MAX_DIM}, got {self.D}")
        checked = []
        for p, c in self.terms:
            p = int(p)
            if not (1 <= p <= MAX_DEGREE):
                raise ValidationError(f"degree must be in 1..{MAX_DEGREE}, got {p}")
            c = np.asarray(c, dtype=float)
            n = self.D ** p
            if c.shape != (n, n):
                raise ValidationError(
                    f"coefficient for degree {p} must be {n}x{n}, got {c.shape}")
            if float(np.max(np.abs(c - c.T))) > 1e-9:
                raise ValidationError(f"coefficient for degree {p} is not symmetric")
            lam = float(np.linalg.eigvalsh(sym(c))[0])
            if lam < -1e-10:
                raise ValidationError(
                    f"coefficient for degree {p} has eigenvalue {lam:.3e}")
            checked.append((p, sym(c)))
        object.__setattr__(self, "terms", tuple(checked))

    def degrees(self):
        return [p for p, _ in self.terms]


@dataclass(frozen=True, eq=False)
class ReferenceMeasure:
    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        weights = np.asarray(self.weights, dtype=float)
        if atoms.ndim != 2 or len(atoms) != len(weights):
            raise ValidationError("atoms and weights must have matching length")
        if np.any(weights < 0.0):
            raise ValidationError("weights must be non-negative")
        if abs(float(weights.sum()) - 1.0) > 1e-12:
            raise ValidationError(f"weights sum to {weights.sum()!r}, not 1")
        norms = np.linalg.norm(atoms, axis=1)
        if np.any(norms > 1.0 + 1e-12):
            raise ValidationError(
                f"atom norm {norms.max():.6f} exceeds the unit ball")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @property
    def D(self) -> int:
        return self.atoms.shape[1]


def ising_measure(D) -> ReferenceMeasure:
    """Uniform measure on the 2^D sign corners scaled to unit norm."""
    corners = np.array(np.meshgrid(*([[-1.0, 1.0]] * D), indexing="ij"))
    atoms = corners.reshape(D, -1).T / np.sqrt(D)
    return ReferenceMeasure(atoms, np.full(len(atoms), 1.0 / len(atoms)))


def _c_tensor(model, p, c):
    return c.reshape((model.D,) * (2 * p))


def xi_eval(model, a) -> float:
    """Evaluate the covariance polynomial at the matrix a."""
    a = np.asarray(a, dtype=float).reshape(model.D, model.D)
    total = 0.0
    for p, c in model.terms:
        subs = [_LETTERS[: 2 * p]]
        for k in range(p):
            subs.append(_LETTERS[k] + _LETTERS[p + k])
        expr = ",".join(subs) + "->"
        total += float(np.einsum(expr, _c_tensor(model, p, c), *([a] * p)))
    return total


def xi_eval_batch(model, r) -> np.ndarray:
    """Vectorized xi over a batch of matrices, shape (B, D, D) -> (B,)."""
    r = np.asarray(r, dtype=float)
    out = np.zeros(r.shape[0])
    for p, c in model.terms:
        subs = [_LETTERS[: 2 * p]]
        for k in range(p):
            subs.append("z" + _LETTERS[k] + _LETTERS[p + k])
        expr = ",".join(subs) + "->z"
        out += np.einsum(expr, _c_tensor(model, p, c), *([r] * p))
    return out


def xi_grad(model, a):
    """Gradient of xi at a symmetric matrix, symmetrized on output."""
    a = sym(np.asarray(a, dtype=float).reshape(model.D, model.D))
    grad = np.zeros((model.D, model.D))
    for p, c in model.terms:
        ct = _c_tensor(model, p, c)
        for m in range(p):
            subs = [_LETTERS[: 2 * p]]
            ops = []
            for k in range(p):
                if k != m:
                    subs.append(_LETTERS[k] + _LETTERS[p + k])
                    ops.append(a)
            expr = ",".join(subs) + "->" + _LETTERS[m] + _LETTERS[p + m]
            grad += np.einsum(expr, ct, *ops)
    asymmetry = float(np.max(np.abs(grad - grad.T)))
    if asymmetry > 1e-10:
        warnings.warn(
            f"gradient asymmetry {asymmetry:.3e} on symmetric input",
            RuntimeWarning, stacklevel=2)
    return sym(grad)


def xi_hessian(model, a):
    """Hessian of xi at a, returned as a (D*D, D*D) matrix."""
    a = sym(np.asarray(a, dtype=float).reshape(model.D, model.D))
    d = model.D
    hess = np.zeros((d, d, d, d))
    for p, c in model.terms:
        if p < 2:
            continue
        ct = _c_tensor(model, p, c)
        for m in range(p):
            for n in range(p):
                if n == m:
                    continue
                subs = [_LETTERS[: 2 * p]]
                ops = []
                for k in range(p):
                    if k not in (m, n):
                        subs.append(_LETTERS[k] + _LETTERS[p + k])
                        ops.append(a)
                out = (_LETTERS[m] + _LETTERS[p + m]
                       + _LETTERS[n] + _LETTERS[p + n])
                expr = ",".join(subs) + "->" + out
                hess += np.einsum(expr, ct, *ops)
    return hess.reshape(d * d, d * d)


def theta_eval(model, a) -> float:
    """a . grad xi(a) - xi(a); non-negative on PSD inputs."""
    a = np.asarray(a, dtype=float).reshape(model.D, model.D)
    return float(np.sum(a * xi_grad(model, a))) - xi_eval(model, a)


def sym_basis(D):
    """Orthonormal basis of symmetric D x D matrices (Frobenius inner
    product), as a list of matrices: diagonal units then off-diagonal
    pairs scaled by 1/sqrt(2)."""
    mats = []
    for d in range(D):
        e = np.zeros((D, D))
        e[d, d] = 1.0
        mats.append(e)
    for u in range(D):
        for v in range(u + 1, D):
            e = np.zeros((D, D))
            e[u, v] = e[v, u] = 1.0 / np.sqrt(2.0)
            mats.append(e)
    return mats


def _hess_opnorm_sym(model, a, basis):
    h = xi_hessian(model, a)
    cols = np.stack([b.reshape(-1) for b in basis], axis=1)
    m = cols.T @ h @ cols
    return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (m + m.T)))))


def _project_ball_psd(a, radius=1.0):
    b = project_psd(a)
    nb = frob(b)
    if nb > radius:
        b = b * (radius / nb)
    return b


def grad_lipschitz_const(model, samples=200, seed=0) -> float:
    """Lipschitz constant of grad xi on the PSD unit ball.

    Since the ball is convex the constant equals the supremum of the
    Hessian operator norm (restricted to symmetric directions) over the
    ball; we sample PSD points, polish the best with a projected pattern
    search, and cross-check against sampled difference ratios.
    """
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    basis = sym_basis(model.D)
    pts = [np.zeros((model.D, model.D)),
           np.eye(model.D) / np.sqrt(model.D)]
    for _ in range(samples):
        m = rng.standard_normal((model.D, model.D))
        a = m @ m.T
        na = frob(a)
        if na > 1e-12:
            pts.append(a / max(na, 1.0))
            pts.append(a / na)
    vals = [_hess_opnorm_sym(model, a, basis) for a in pts]
    best = max(vals)
    a = pts[int(np.argmax(vals))]

    # pattern-search polish over the PSD unit ball
    dirs = basis
    step = 0.25
    while step > 1e-6:
        improved = False
        for d in dirs:
            for sgn in (1.0, -1.0):
                cand = _project_ball_psd(a + sgn * step * d)
                v = _hess_opnorm_sym(model, cand, basis)
                if v > best + 1e-14:
                    best, a, improved = v, cand, True
        if not improved:
            step *= 0.5

    # sampled difference ratios as an independent floor
    for _ in range(samples):
        m1 = rng.standard_normal((model.D, model.D))
        m2 = rng.standard_normal((model.D, model.D))
        x = _project_ball_psd(m1 @ m1.T)
        y = _project_ball_psd(m2 @ m2.T)
        den = frob(x - y)
        if den > 1e-9:
            ratio = frob(xi_grad(model, x) - xi_grad(model, y)) / den
            best = max(best, ratio)
    return best


def grad_lipschitz_upper_bound(model) -> float:
    """Analytic bound sum_p p (p-1) ||C_p||_op for cross-checking."""
    total = 0.0
    for p, c in model.terms:
        total += p * (p - 1) * float(np.max(np.abs(np.linalg.eigvalsh(c))))
    return total


def xi_star(model, a, radius, starts=8, tol=1e-8, max_iters=400, seed=0,
            x0=None, return_argmax=False):
    """Convex dual sup over PSD b with |b| <= radius of a.b - xi(b).

    Projected gradient ascent with backtracking and multiple starts.  The
    projection onto the PSD cone intersected with the Frobenius ball is
    eigenvalue clipping followed by radial scaling.  Raises NonConvergence
    if no run meets the first-order tolerance.  With return_argmax the
    best maximizer is returned alongside the value (handy as a warm start
    for repeated nearby calls via x0).
    """
    if radius <= 0.0:
        raise ValidationError("radius must be positive")
    a = sym(np.asarray(a, dtype=float).reshape(model.D, model.D))
    rng = np.random.default_rng(seed)
    inits = []
    if x0 is not None:
        inits.append(_project_ball_psd(np.asarray(x0, dtype=float), radius))
    inits += [np.zeros_like(a),
              _project_ball_psd(a, radius),
              _project_ball_psd(0.25 * radius * np.eye(model.D), radius)]
    while len(inits) < starts + (1 if x0 is not None else 0):
        m = rng.standard_normal((model.D, model.D))
        inits.append(_project_ball_psd(m @ m.T, radius))

    def value(b):
        return float(np.sum(a * b)) - xi_eval(model, b)

    best_val, best_arg, converged = -np.inf, inits[0], False
    for b in inits:
        step = 0.5
        fb = value(b)
        for _ in range(max_iters):
            g = a - xi_grad(model, b)
            probe = 1e-3
            pg = frob(b - _project_ball_psd(b + probe * g, radius)) / probe
            if pg <= tol:
                converged = True
                break
            moved = False
            while step > 1e-14:
                cand = _project_ball_psd(b + step * g, radius)
                fc = value(cand)
                if fc >= fb + 1e-4 * float(np.sum(g * (cand - b))):
                    b, fb, moved = cand, fc, True
                    step = min(step * 1.5, 8.0)
                    break
                step *= 0.5
            if not moved:
                break
        if fb > best_val:
            best_val, best_arg = fb, b
    if not converged:
        raise NonConvergence("xi_star ascent did not meet first-order tolerance")
    if return_argmax:
        return best_val, best_arg
    return best_val


@dataclass(frozen=True)
class ConvexityReport:
    is_convex_on_psd: bool
    witness: tuple | None


def convexity_probe(model, samples=500, seed=0) -> ConvexityReport:
    """Midpoint-convexity sampling over PSD pairs in the unit ball.

    Probabilistic certificate only: returns a witness (a, b, lambda, gap)
    on the first violation found.
    """
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    for _ in range(samples):
        m1 = rng.standard_normal((model.D, model.D))
        m2 = rng.standard_normal((model.D, model.D))
        a = _project_ball_psd(m1 @ m1.T)
        b = _project_ball_psd(m2 @ m2.T)
        fa, fb = xi_eval(model, a), xi_eval(model, b)
        for lam in (0.25, 0.5, 0.75):
            mid = lam * a + (1.0 - lam) * b
            gap = xi_eval(model, mid) - (lam * fa + (1.0 - lam) * fb)
            if gap > 1e-10:
                return ConvexityReport(False, (a, b, lam, float(gap)))
    return ConvexityReport(True, None)


def sk(beta=1.0) -> XiModel:
    """D=1 quadratic model xi(r) = beta^2 r^2."""
    return XiModel(1, ((2, np.array([[beta ** 2]])),))


def pure_p(p, beta=1.0) -> XiModel:
    """D=1 pure model xi(r) = beta^2 r^p."""
    return XiModel(1, ((p, np.array([[beta ** 2]])),))


def bipartite(beta=1.0) -> XiModel:
    """D=2 model xi(A) = beta^2 A_11 A_22 (not convex on the PSD cone)."""
    c = np.zeros((4, 4))
    c[1, 1] = c[2, 2] = 0.5 * beta ** 2
    return XiModel(2, ((2, c),))


def frobenius_square(beta=1.0, D=2) -> XiModel:
    """xi(A) = beta^2 |A|_F^2, a convex quadratic in the matrix entries."""
    v = np.eye(D).reshape(-1)
    return XiModel(D, ((2, beta ** 2 * np.outer(v, v)),))


_FAMILIES = {
    "sk": lambda D, beta, p: sk(beta),
    "pure_p": lambda D, beta, p: pure_p(p if p else 3, beta),
    "bipartite": lambda D, beta, p: bipartite(beta),
    "frobenius": lambda D, beta, p: frobenius_square(beta, D),
}


def load_model_dict(spec):
    """Build (XiModel, ReferenceMeasure) from the JSON model schema."""
    try:
        D = int(spec["D"])
        entries = spec["terms"]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"model spec missing field: {exc}") from exc
    terms = []
    for entry in entries:
        if "family" in entry:
            fam = entry["family"]
            if fam not in _FAMILIES:
                raise ValidationError(f"unknown model family {fam!r}")
            built = _FAMILIES[fam](D, float(entry.get("beta", 1.0)),
                                   entry.get("p"))
            if built.D != D:
                raise ValidationError(
                    f"family {fam!r} has D={built.D}, spec says D={D}")
            terms.extend(built.terms)
        else:
            terms.append((int(entry["p"]), np.asarray(entry["C"], dtype=float)))
    model = XiModel(D, tuple(terms))
    p1_spec = spec.get("P1", {"family": "ising"})
    if "family" in p1_spec:
        if p1_spec["family"] != "ising":
            raise ValidationError(f"unknown measure family {p1_spec['family']!r}")
        measure = ising_measure(D)
    else:
        measure = ReferenceMeasure(np.asarray(p1_spec["atoms"], dtype=float),
                                   np.asarray(p1_spec["weights"], dtype=float))
    if measure.D != D:
        raise ValidationError(
            f"reference measure dimension {measure.D} != model D {D}")
    return model, measure
