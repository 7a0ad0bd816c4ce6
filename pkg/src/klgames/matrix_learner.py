"""Online learning of regularized matrix-game equilibria from noisy
bandit feedback.

The hidden payoff matrix is linear in known per-cell feature vectors:
payoff[i, j] = features[i, j] @ weights for an unknown weight vector.
Each round the learner

1. forms the ridge estimate of the weights from every sample gathered
   so far and the induced estimated payoff matrix;
2. solves the regularized game on that estimate, warm-started from the
   previous round's solution;
3. adds an elliptical-confidence bonus per cell, producing optimistic
   (estimate + bonus) and pessimistic (estimate - bonus) matrices;
4. computes the closed-form tilted best response of the row player on
   the optimistic matrix against the current column policy, and of the
   column player on the pessimistic matrix against the current row
   policy;
5. samples one cell from (optimistic row response, current column
   policy) and one from (current row policy, pessimistic column
   response), queries the oracle at both, and absorbs the noisy values
   into the ridge statistics.

Regret is accounted on the true game: each evaluated round records the
duality gap of the current equilibrium pair under the oracle's actual
payoff matrix, which the learner itself only ever touches through noisy
cell queries.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NoConvergence
from .matrix_game import (
    DEFAULT_NE_MAX_ITERS,
    DEFAULT_NE_TOL,
    KLMatrixGame,
    PolicyPair,
    _entropic_saddle_batch,
    _solve_beta0,
    dual_gap,
)
from .numerics import RidgeState, as_distribution, draw_categorical, gibbs_tilt
from .traces import RegretTrace

# Slack allowed on the static norm bounds (weights and features), purely
# to absorb construction round-off.
_NORM_SLACK = 1e-9


def confidence_width(sigma, feature_dim, num_rounds, lam=1.0, delta=0.1):
    """Radius of the ridge confidence ellipsoid for a whole run.

    Equals ``sigma * sqrt(feature_dim * log(3 * (1 + 2 * num_rounds /
    lam) / delta)) + sqrt(lam * feature_dim)``: with probability at
    least ``1 - delta`` the ridge estimate stays within this distance of
    the true weights, in the norm induced by the design matrix,
    simultaneously over ``num_rounds`` rounds of two samples each.
    Noiseless runs (``sigma == 0``) collapse to ``sqrt(lam *
    feature_dim)``, the contribution of the ridge prior alone.
    """
    sigma = float(sigma)
    feature_dim = int(feature_dim)
    num_rounds = int(num_rounds)
    lam = float(lam)
    delta = float(delta)
    if not np.isfinite(sigma) or sigma < 0.0:
        raise ValueError(f"sigma must be finite and >= 0, got {sigma}")
    if feature_dim < 1:
        raise ValueError(f"feature_dim must be >= 1, got {feature_dim}")
    if num_rounds < 1:
        raise ValueError(f"num_rounds must be >= 1, got {num_rounds}")
    if not np.isfinite(lam) or lam <= 0.0:
        raise ValueError(f"lam must be finite and > 0, got {lam}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    noise_term = sigma * np.sqrt(
        feature_dim * np.log(3.0 * (1.0 + 2.0 * num_rounds / lam) / delta))
    return float(noise_term + np.sqrt(lam * feature_dim))


@dataclass
class LinearPayoffOracle:
    """Noisy bandit access to a payoff matrix linear in known features.

    weights: (d,) hidden parameter, norm at most sqrt(d); features:
    (m, n, d) per-cell feature vectors, each of norm at most 1; sigma:
    Gaussian noise scale of query responses (0 for noiseless).  The
    exact matrix ``payoff`` is cached for regret accounting and
    diagnostics; learning code must only touch ``query``.
    """

    weights: np.ndarray
    features: np.ndarray
    sigma: float = 0.0
    seed: int = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.features = np.asarray(self.features, dtype=float)
        self.sigma = float(self.sigma)
        if self.features.ndim != 3:
            raise DimensionMismatch(
                f"features must be (rows, columns, dim), got shape "
                f"{self.features.shape}")
        m, n, d = self.features.shape
        if min(m, n, d) < 1:
            raise DimensionMismatch(
                f"features must be nonempty, got shape {(m, n, d)}")
        if self.weights.shape != (d,):
            raise DimensionMismatch(
                f"weights have shape {self.weights.shape}, expected ({d},)")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights contain non-finite entries")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite entries")
        if not np.isfinite(self.sigma) or self.sigma < 0.0:
            raise ValueError(f"sigma must be finite and >= 0, "
                             f"got {self.sigma}")
        if np.linalg.norm(self.weights) > np.sqrt(d) + _NORM_SLACK:
            raise ValueError(
                f"weight norm {np.linalg.norm(self.weights):.6g} exceeds "
                f"sqrt(dim) = {np.sqrt(d):.6g}")
        cell_norms = np.linalg.norm(self.features, axis=2)
        if cell_norms.max() > 1.0 + _NORM_SLACK:
            raise ValueError(
                f"feature norm {cell_norms.max():.6g} exceeds 1")
        self.payoff = self.features @ self.weights
        self.features_flat = self.features.reshape(m * n, d)
        self.generator = np.random.default_rng(self.seed)

    @property
    def shape(self):
        return self.payoff.shape

    @property
    def feature_dim(self):
        return self.features.shape[2]

    def query(self, i, j, rng=None):
        """Observe payoff[i, j] plus one N(0, sigma^2) noise draw.

        Noise comes from ``rng`` when given, else from the oracle's own
        stream.  Noiseless oracles consume no randomness at all, so the
        caller's stream layout does not depend on sigma > 0 draws.
        """
        value = float(self.payoff[i, j])
        if self.sigma == 0.0:
            return value
        stream = self.generator if rng is None else rng
        return value + self.sigma * float(stream.standard_normal())


def make_tabular_oracle(payoff, sigma=0.0, seed=None):
    """Oracle whose features are one-hot per cell, so the weight vector
    is the payoff table itself.

    The weight-norm bound then reads ||payoff||_F <= sqrt(rows *
    columns); entries in [-1, 1] always satisfy it.
    """
    payoff = np.asarray(payoff, dtype=float)
    if payoff.ndim != 2 or payoff.size == 0:
        raise DimensionMismatch(
            f"payoff must be a nonempty matrix, got shape {payoff.shape}")
    m, n = payoff.shape
    features = np.eye(m * n).reshape(m, n, m * n)
    return LinearPayoffOracle(payoff.ravel(), features, sigma, seed)


def make_random_oracle(num_max_actions, num_min_actions, feature_dim,
                       sigma=0.0, payoff_scale=1.0, seed=None):
    """Random oracle with unit-sphere features and a hidden weight
    vector scaled so the largest payoff magnitude equals
    ``payoff_scale``.

    The scaling is capped at the weight-norm bound sqrt(feature_dim),
    so extreme requests yield the largest admissible matrix instead.
    """
    m = int(num_max_actions)
    n = int(num_min_actions)
    d = int(feature_dim)
    if min(m, n, d) < 1:
        raise ValueError(f"sizes must be >= 1, got {(m, n, d)}")
    payoff_scale = float(payoff_scale)
    if not np.isfinite(payoff_scale) or payoff_scale <= 0.0:
        raise ValueError(f"payoff_scale must be finite and > 0, "
                         f"got {payoff_scale}")
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((m, n, d))
    features /= np.linalg.norm(features, axis=2, keepdims=True)
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    peak = np.abs(features @ direction).max()
    scale = np.sqrt(d) if peak == 0.0 else min(payoff_scale / peak,
                                               np.sqrt(d))
    return LinearPayoffOracle(scale * direction, features, sigma, seed)


@dataclass
class MatrixLearnerState:
    """Mutable per-run state of the bandit matrix-game learner.

    ``round_index`` is the 1-based index of the next round to execute.
    The ridge statistics have absorbed exactly two samples per completed
    round, mirrored in ``dataset_plus`` / ``dataset_minus`` as (row,
    column, observed value) triples.  The last computed policies are
    kept for inspection, and the solver caches (``warm_logits`` for the
    entropic path, ``support_hint`` for the unregularized path) carry
    each round's equilibrium solve into the next as a warm start.
    """

    ridge: RidgeState
    confidence_width: float
    dataset_plus: list = field(default_factory=list)
    dataset_minus: list = field(default_factory=list)
    round_index: int = 1
    mu: np.ndarray = None
    nu: np.ndarray = None
    mu_tilde: np.ndarray = None
    nu_tilde: np.ndarray = None
    warm_logits: tuple = None
    support_hint: tuple = None

    @classmethod
    def initial(cls, oracle, num_rounds, lam=1.0, delta=0.1):
        """Fresh state sized for ``oracle`` over ``num_rounds`` rounds."""
        width = confidence_width(oracle.sigma, oracle.feature_dim,
                                 num_rounds, lam, delta)
        return cls(RidgeState(oracle.feature_dim, lam), width)


@dataclass(frozen=True)
class MatrixLearnerRound:
    """Per-round record emitted by ``matrix_learner_step``.

    ``gap`` and ``violation`` are None on rounds whose diagnostics were
    skipped (evaluation stride).
    """

    round_index: int
    gap: float
    violation: bool
    max_bonus: float
    ne_iters: int


def _unpack_refs(refs, shape):
    """Validated (mu_ref, nu_ref) from a PolicyPair or a 2-tuple."""
    if isinstance(refs, PolicyPair):
        mu_ref, nu_ref = refs.mu, refs.nu
    else:
        mu_ref, nu_ref = refs
    mu_ref = as_distribution(mu_ref, "mu_ref")
    nu_ref = as_distribution(nu_ref, "nu_ref")
    if mu_ref.shape != (shape[0],) or nu_ref.shape != (shape[1],):
        raise DimensionMismatch(
            f"reference shapes {mu_ref.shape}, {nu_ref.shape} do not "
            f"match the game shape {shape}")
    return mu_ref, nu_ref


def matrix_learner_step(state, oracle, beta, refs, rng, *, bonus_scale=1.0,
                        tol=DEFAULT_NE_TOL, max_iters=DEFAULT_NE_MAX_ITERS,
                        true_game=None, evaluate_gap=True):
    """Execute one learner round, updating ``state`` in place.

    Returns the round's ``MatrixLearnerRound`` record.  ``refs`` is the
    reference pair of the regularized game (a PolicyPair or a (mu_ref,
    nu_ref) tuple).  Action and noise draws come from ``rng`` in a fixed
    order (optimistic row, column, noise, row, pessimistic column,
    noise), so runs are reproducible from the seed alone.  When
    diagnostics are evaluated, ``true_game`` may carry a prebuilt
    regularized game over the oracle's exact payoff matrix to save
    rebuilding it each round.
    """
    beta = float(beta)
    mu_ref, nu_ref = _unpack_refs(refs, oracle.shape)
    if beta > 0.0 and (mu_ref.min() <= 0.0 or nu_ref.min() <= 0.0):
        raise ValueError("references must be strictly positive when "
                         "beta > 0")

    # (a) Ridge estimate of the weights and the induced payoff matrix.
    estimate = state.ridge.solve()
    payoff_hat = (oracle.features_flat @ estimate).reshape(oracle.shape)

    # (b) Equilibrium of the estimated game, warm-started.
    if beta == 0.0:
        mu, nu, _, ne_iters, support = _solve_beta0(
            payoff_hat, mu_ref, nu_ref, tol,
            support_hint=state.support_hint)
        state.support_hint = support
    else:
        mu_rows, nu_rows, lmu, lnu, _, iter_rows = _entropic_saddle_batch(
            payoff_hat[None], beta, np.log(mu_ref)[None],
            np.log(nu_ref)[None], tol, max_iters,
            init_logs=state.warm_logits)
        mu, nu = mu_rows[0], nu_rows[0]
        ne_iters = int(iter_rows[0])
        state.warm_logits = (lmu, lnu)

    # (c) Per-cell elliptical bonuses and the shifted matrices.
    width = bonus_scale * state.confidence_width
    leverage = np.einsum("kd,de,ke->k", oracle.features_flat,
                         state.ridge.sigma_inv, oracle.features_flat)
    bonus = width * np.sqrt(np.maximum(leverage, 0.0))
    bonus = bonus.reshape(oracle.shape)
    payoff_plus = payoff_hat + bonus
    payoff_minus = payoff_hat - bonus

    # (d) Closed-form tilted best responses on the shifted matrices
    # (the same Gibbs kernel the public best-response operations use).
    mu_tilde = gibbs_tilt(mu_ref, payoff_plus @ nu, beta)
    nu_tilde = gibbs_tilt(nu_ref, -(payoff_minus.T @ mu), beta)

    # (e) Sample one cell from each coupling and absorb the noisy
    # observations.
    i_plus = draw_categorical(rng, mu_tilde)
    j_plus = draw_categorical(rng, nu)
    value_plus = oracle.query(i_plus, j_plus, rng)
    state.ridge.absorb(oracle.features[i_plus, j_plus], value_plus)
    state.dataset_plus.append((i_plus, j_plus, value_plus))

    i_minus = draw_categorical(rng, mu)
    j_minus = draw_categorical(rng, nu_tilde)
    value_minus = oracle.query(i_minus, j_minus, rng)
    state.ridge.absorb(oracle.features[i_minus, j_minus], value_minus)
    state.dataset_minus.append((i_minus, j_minus, value_minus))

    # (f) Diagnostics against the true game.
    gap = violation = None
    if evaluate_gap:
        if true_game is None:
            true_game = KLMatrixGame(oracle.payoff, beta, mu_ref, nu_ref)
        gap = float(dual_gap(true_game, PolicyPair(mu, nu)))
        violation = bool(np.any(payoff_plus < oracle.payoff)
                         or np.any(payoff_minus > oracle.payoff))

    record = MatrixLearnerRound(state.round_index, gap, violation,
                                float(bonus.max()), ne_iters)
    state.mu, state.nu = mu, nu
    state.mu_tilde, state.nu_tilde = mu_tilde, nu_tilde
    state.round_index += 1
    return record


def run_matrix_learner(oracle, beta, num_rounds, *, refs=None, seed=None,
                       lam=1.0, delta=0.1, bonus_scale=1.0,
                       tol=DEFAULT_NE_TOL, max_iters=DEFAULT_NE_MAX_ITERS,
                       eval_stride=1):
    """Run the bandit learner for ``num_rounds`` rounds.

    Returns the ``RegretTrace`` of every evaluated round (all of them at
    the default stride of 1); ``trace.violation_fraction`` is the
    optimism diagnostic.  ``refs`` defaults to the uniform pair.  With
    ``eval_stride = k`` only rounds 1, k+1, 2k+1, ... are evaluated;
    diagnostics consume no randomness, so the stride never perturbs the
    learning path itself.  If the inner equilibrium solver fails, the
    NoConvergence it raises is re-raised with the rounds completed so
    far attached as ``partial_trace``.
    """
    m, n = oracle.shape
    if refs is None:
        refs = PolicyPair(np.full(m, 1.0 / m), np.full(n, 1.0 / n))
    mu_ref, nu_ref = _unpack_refs(refs, oracle.shape)
    refs = PolicyPair(mu_ref, nu_ref)
    eval_stride = int(eval_stride)
    if eval_stride < 1:
        raise ValueError(f"eval_stride must be >= 1, got {eval_stride}")
    rng = np.random.default_rng(seed)
    state = MatrixLearnerState.initial(oracle, num_rounds, lam, delta)
    true_game = KLMatrixGame(oracle.payoff, float(beta), mu_ref, nu_ref)
    trace = RegretTrace()
    for t in range(1, int(num_rounds) + 1):
        evaluate = (t - 1) % eval_stride == 0
        try:
            record = matrix_learner_step(
                state, oracle, beta, refs, rng, bonus_scale=bonus_scale,
                tol=tol, max_iters=max_iters, true_game=true_game,
                evaluate_gap=evaluate)
        except NoConvergence as exc:
            exc.partial_trace = trace
            raise
        if evaluate:
            trace.append(record.round_index, record.gap, record.violation,
                         record.max_bonus, record.ne_iters)
    return trace
