"""Shared numerical kernels: simplex checks, soft values, Gibbs tilts,
and incremental ridge regression with a tracked inverse.

Conventions used throughout the package:
  * distributions are plain 1-D numpy arrays (entries >= 0, sum == 1
    within SIMPLEX_SUM_TOL),
  * a "reference" is the anchor distribution of a KL penalty; entries
    with zero reference mass are excluded from soft maxima and keep
    exactly zero mass under Gibbs tilts,
  * beta == 0.0 switches every softened operation to its exact hard
    max/argmax limit (no smoothing, ties broken at the lowest index).
"""

import numpy as np

from .errors import DegenerateReference, DimensionMismatch, SupportMismatch

# Default tolerances; callers with unusual scaling can pass their own.
SIMPLEX_SUM_TOL = 1e-9     # |sum(p) - 1| allowed for a distribution
INVERSE_CHECK_TOL = 1e-6   # Frobenius tolerance for sigma_inv @ sigma = I
SIGMA_RECON_TOL = 1e-8     # elementwise tolerance when re-deriving sigma
RIDGE_REFACTOR_INTERVAL = 256  # rank-one updates between full inversions


def as_distribution(x, name="distribution", tol=SIMPLEX_SUM_TOL):
    """Validate and return ``x`` as a probability vector.

    Raises ValueError when entries are negative/non-finite or the sum is
    off by more than ``tol``.
    """
    p = np.asarray(x, dtype=float)
    if p.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError(f"{name} has non-finite entries")
    if np.any(p < 0):
        raise ValueError(f"{name} has negative entries")
    if abs(p.sum() - 1.0) > tol:
        raise ValueError(f"{name} sums to {p.sum()!r}, expected 1 within {tol}")
    return p


def _check_lengths(a, b, what):
    if a.shape != b.shape:
        raise DimensionMismatch(
            f"{what}: shapes {a.shape} and {b.shape} differ")


def kl_divergence(p, q, tol=SIMPLEX_SUM_TOL):
    """KL(p || q) = sum_i p_i log(p_i / q_i) with the 0 log 0 = 0 convention.

    Both arguments must be distributions of the same length.  Raises
    SupportMismatch when p puts mass on an entry where q has none, and
    DimensionMismatch on length mismatch.  The result is clamped at 0 to
    absorb rounding when p ~ q.
    """
    p = as_distribution(p, "p", tol)
    q = as_distribution(q, "q", tol)
    _check_lengths(p, q, "kl_divergence")
    mask = p > 0
    if np.any(q[mask] == 0.0):
        raise SupportMismatch("p has mass where q has none")
    val = float(np.sum(p[mask] * np.log(p[mask] / q[mask])))
    return max(val, 0.0)


def _check_reference(ref, name="ref"):
    r = np.asarray(ref, dtype=float)
    if r.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {r.shape}")
    if not np.all(np.isfinite(r)) or np.any(r < 0):
        raise DegenerateReference(f"{name} must be finite and nonnegative")
    if not np.any(r > 0):
        raise DegenerateReference(f"{name} has no positive mass")
    return r


def soft_value(ref, scores, beta):
    """Softened maximum of ``scores`` anchored at the reference ``ref``.

    For beta > 0 returns beta * log sum_i ref_i exp(scores_i / beta),
    computed with max-subtraction so that shifting all scores by c shifts
    the result by exactly c (up to roundoff).  For beta == 0 returns the
    hard maximum over the support {i : ref_i > 0}.
    """
    r = _check_reference(ref)
    s = np.asarray(scores, dtype=float)
    _check_lengths(r, s, "soft_value")
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    support = r > 0
    if beta == 0.0:
        return float(np.max(s[support]))
    m = float(np.max(s[support]))
    z = float(np.sum(r[support] * np.exp((s[support] - m) / beta)))
    return m + beta * float(np.log(z))


def gibbs_tilt(ref, scores, beta):
    """Exponentially tilt ``ref`` by ``scores / beta`` and normalize.

    This is the closed-form maximizer of  <p, scores> - beta * KL(p || ref)
    over distributions p.  Entries with ref_i == 0 stay exactly 0.  For
    beta == 0 returns a point mass on the best-scoring supported entry
    (ties broken at the lowest index).
    """
    r = _check_reference(ref)
    s = np.asarray(scores, dtype=float)
    _check_lengths(r, s, "gibbs_tilt")
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    support = r > 0
    out = np.zeros_like(r)
    if beta == 0.0:
        masked = np.where(support, s, -np.inf)
        out[int(np.argmax(masked))] = 1.0
        return out
    m = float(np.max(s[support]))
    w = r[support] * np.exp((s[support] - m) / beta)
    out[support] = w / w.sum()
    return out


def draw_categorical(rng, probs):
    """Sample an index from a probability vector using one uniform draw.

    Consumes exactly one rng.random() call, so callers control stream
    layout explicitly (bit-reproducible traces depend on it).
    """
    idx = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
    return min(idx, len(probs) - 1)


def _check_rows(a, b, what):
    if a.ndim != 2 or a.shape != b.shape:
        raise DimensionMismatch(
            f"{what}: expected matching 2-D arrays, got shapes "
            f"{a.shape} and {b.shape}")


def kl_divergence_rows(p, q, tol=SIMPLEX_SUM_TOL):
    """Row-wise KL(p_k || q_k) for stacked distributions, shape (k, n).

    Vectorized counterpart of kl_divergence with the same conventions:
    0 log 0 = 0, SupportMismatch when any row of p escapes the support
    of the matching row of q, and results clamped at 0.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    _check_rows(p, q, "kl_divergence_rows")
    for arr, name in ((p, "p"), (q, "q")):
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise ValueError(f"{name} rows must be finite and nonnegative")
        if np.any(np.abs(arr.sum(axis=1) - 1.0) > tol):
            raise ValueError(f"{name} rows must each sum to 1 within {tol}")
    mask = p > 0
    if np.any(mask & (q == 0.0)):
        raise SupportMismatch("p has mass where q has none")
    terms = np.zeros_like(p)
    np.divide(p, q, out=terms, where=mask)
    np.log(terms, out=terms, where=mask)
    return np.maximum(np.sum(p * terms, axis=1, where=mask), 0.0)


def soft_value_rows(refs, scores, beta):
    """Row-wise soft_value over stacked (reference, score) rows (k, n).

    Fast path for backward-induction sweeps; rows may have different
    supports.  Callers are trusted to pass validated references.
    """
    refs = np.asarray(refs, dtype=float)
    scores = np.asarray(scores, dtype=float)
    _check_rows(refs, scores, "soft_value_rows")
    support = refs > 0
    masked = np.where(support, scores, -np.inf)
    m = masked.max(axis=1)
    if beta == 0.0:
        return m
    # zero the exponent off-support before exp: those entries multiply a
    # zero reference weight but must not overflow
    arg = np.where(support, (scores - m[:, None]) / beta, 0.0)
    z = np.sum(refs * np.exp(arg), axis=1)
    return m + beta * np.log(z)


def gibbs_tilt_rows(refs, scores, beta):
    """Row-wise gibbs_tilt over stacked (reference, score) rows (k, n)."""
    refs = np.asarray(refs, dtype=float)
    scores = np.asarray(scores, dtype=float)
    _check_rows(refs, scores, "gibbs_tilt_rows")
    support = refs > 0
    masked = np.where(support, scores, -np.inf)
    if beta == 0.0:
        out = np.zeros_like(refs)
        out[np.arange(refs.shape[0]), np.argmax(masked, axis=1)] = 1.0
        return out
    m = masked.max(axis=1, keepdims=True)
    w = refs * np.exp(np.where(support, (scores - m) / beta, 0.0))
    return w / w.sum(axis=1, keepdims=True)


class RidgeState:
    """Sufficient statistics of a ridge regression, updated one sample
    at a time.

    Maintains sigma = lam * I + sum_k phi_k phi_k^T, its inverse (via
    Sherman-Morrison rank-one updates, re-derived from sigma by a full
    factorization every ``refactor_interval`` absorptions to stop error
    accumulation), and the running sum xty = sum_k y_k phi_k.
    """

    __slots__ = ("dim", "lam", "count", "sigma", "sigma_inv", "xty",
                 "refactor_interval", "_since_refactor")

    def __init__(self, dim, lam=1.0, refactor_interval=RIDGE_REFACTOR_INTERVAL):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        if not (lam > 0):
            raise ValueError(f"lam must be > 0, got {lam}")
        if refactor_interval < 1:
            raise ValueError("refactor_interval must be >= 1")
        self.dim = int(dim)
        self.lam = float(lam)
        self.count = 0
        self.sigma = self.lam * np.eye(self.dim)
        self.sigma_inv = np.eye(self.dim) / self.lam
        self.xty = np.zeros(self.dim)
        self.refactor_interval = int(refactor_interval)
        self._since_refactor = 0

    def copy(self):
        other = RidgeState.__new__(RidgeState)
        other.dim = self.dim
        other.lam = self.lam
        other.count = self.count
        other.sigma = self.sigma.copy()
        other.sigma_inv = self.sigma_inv.copy()
        other.xty = self.xty.copy()
        other.refactor_interval = self.refactor_interval
        other._since_refactor = self._since_refactor
        return other

    def absorb(self, phi, y):
        """Absorb one (features, target) sample in place."""
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (self.dim,):
            raise DimensionMismatch(
                f"phi has shape {phi.shape}, expected ({self.dim},)")
        if not np.all(np.isfinite(phi)) or not np.isfinite(y):
            raise ValueError("non-finite sample")
        self.count += 1
        if not np.any(phi):
            return  # zero features change nothing but the count
        self.sigma += np.outer(phi, phi)
        self.xty += float(y) * phi
        u = self.sigma_inv @ phi
        denom = 1.0 + float(phi @ u)
        self.sigma_inv -= np.outer(u, u) / denom
        self._since_refactor += 1
        if self._since_refactor >= self.refactor_interval:
            self._refactor()

    def _refactor(self):
        inv = np.linalg.inv(self.sigma)
        self.sigma_inv = (inv + inv.T) / 2.0
        self._since_refactor = 0

    def solve(self):
        """Ridge estimate sigma^{-1} xty (the zero vector when empty)."""
        return self.sigma_inv @ self.xty

    def mahalanobis(self, phi):
        """sqrt(phi^T sigma^{-1} phi); at most 1/sqrt(lam) for |phi| <= 1."""
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (self.dim,):
            raise DimensionMismatch(
                f"phi has shape {phi.shape}, expected ({self.dim},)")
        q = float(phi @ self.sigma_inv @ phi)
        return float(np.sqrt(max(q, 0.0)))


def ridge_absorb(state, phi, y):
    """Return a new RidgeState with one extra absorbed sample."""
    out = state.copy()
    out.absorb(phi, y)
    return out


def ridge_solve(state):
    """Ridge estimate for ``state`` (zero vector when no data)."""
    return state.solve()


def mahalanobis(state, phi):
    """Confidence geometry norm sqrt(phi^T sigma^{-1} phi) of ``state``."""
    return state.mahalanobis(phi)
