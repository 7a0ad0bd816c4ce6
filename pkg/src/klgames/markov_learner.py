"""Episodic learning of regularized Markov-game equilibria from
sampled trajectories.

The environment's rewards and transitions are linear in known per-cell
feature vectors but otherwise hidden; the learner only sees the
trajectories it plays.  Each episode it

1. runs a backward pass over steps: for every step it ridge-regresses
   three Bellman targets over all data gathered so far (a plain
   mean-squared-error target plus one target per player continued with
   that player's own shifted value table), giving three Q tables per
   step;
2. shifts the two per-player tables by a combined elliptical-confidence
   bonus (optimism width plus twice the regression width) -- upward for
   the max player, downward for the min player -- and clamps all three
   tables into stage-dependent intervals (``ProjectionSpec``);
3. solves the regularized stage game on the unshifted table at every
   state, warm-started from the previous episode, giving the policy
   pair that is actually evaluated;
4. computes closed-form tilted best responses on the shifted tables:
   the max player against the current min policy on the upshifted
   table, the min player against the current max policy on the
   downshifted table;
5. plays two coupled episodes from one shared initial state -- (tilted
   max, current min) and (current max, tilted min) -- and absorbs both
   trajectories into every step's ridge statistics.

Regret is accounted on the true environment: each evaluated episode
records the exact duality gap of the current policy pair, which the
learner itself never observes.  Optimism diagnostics count, per
episode, the table cells where the upshifted Q fails to dominate the
unshifted one or the exact Q of reference opponents, and where the
upshift exceeds twice its intended margin.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NoConvergence
from .markov_game import (
    _require_positive_refs,
    _unpack_refs,
    best_response_value_markov,
    evaluate_pair,
    sample_trajectory,
    uniform_references,
)
from .matrix_game import (
    DEFAULT_NE_MAX_ITERS,
    DEFAULT_NE_TOL,
    _entropic_saddle_batch,
    _solve_beta0,
)
from .numerics import (
    RidgeState,
    draw_categorical,
    gibbs_tilt_rows,
    kl_divergence_rows,
)
from .traces import RegretTrace

# Slack under which the optimism diagnostics forgive a comparison; sits
# above solver tolerances and float noise, far below any real effect.
DIAGNOSTIC_SLACK = 1e-9

# The three per-step value estimates, named by their Bellman target.
ESTIMATE_KINDS = ("mse", "plus", "minus")

# trace.extras keys of the per-evaluated-episode diagnostic counts.
VIOLATION_KEYS = ("below_mse", "below_current", "below_tilted",
                  "below_best_response", "gap_bound")


@dataclass(frozen=True)
class ProjectionSpec:
    """Stagewise clamp intervals for the three value estimates.

    Steps are 0-based; at step ``h`` of a horizon-``H`` run there are
    ``c = H - h`` rewards left to collect, and the intervals are

    * mse: [0, c];
    * plus (regularized): [0, 3c^2]; (unregularized): [0, 2c];
    * minus: the plus interval's ceiling negated as floor, with the mse
      ceiling on top: [-3c^2, c] or [-2c, c].

    ``interval(H, kind)`` collapses to {0}, matching the convention
    that the value table's terminal row is identically zero.

    ``reflected=True`` describes the sign-flipped game with the player
    roles swapped: each interval is the mirror image of the opposite
    player's interval (plus <-> minus, mse to itself), so clamping a
    negated table through the reflected spec equals negating the
    original clamp.
    """

    horizon: int
    regularized: bool = True
    reflected: bool = False

    def __post_init__(self):
        if int(self.horizon) < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")

    @classmethod
    def for_game(cls, horizon, beta):
        """Intervals for a game with regularization strength ``beta``."""
        return cls(int(horizon), float(beta) > 0.0)

    def interval(self, h, kind):
        """(lower, upper) bounds of the ``kind`` estimate at step ``h``."""
        if kind not in ESTIMATE_KINDS:
            raise ValueError(
                f"kind must be one of {ESTIMATE_KINDS}, got {kind!r}")
        h = int(h)
        if not 0 <= h <= self.horizon:
            raise ValueError(
                f"step must lie in [0, {self.horizon}], got {h}")
        c = float(self.horizon - h)
        peak = 3.0 * c * c if self.regularized else 2.0 * c
        table = {"mse": (0.0, c), "plus": (0.0, peak), "minus": (-peak, c)}
        if self.reflected:
            swap = {"mse": "mse", "plus": "minus", "minus": "plus"}
            low, high = table[swap[kind]]
            return -high, -low
        return table[kind]

    def clamp(self, h, kind, values):
        """Clip ``values`` into the ``kind`` interval at step ``h``."""
        low, high = self.interval(h, kind)
        return np.clip(values, low, high)

    def mirrored(self):
        """The spec of the sign-flipped, role-swapped game."""
        return ProjectionSpec(self.horizon, self.regularized,
                              not self.reflected)


def bonus_parameters(feature_dim, horizon, num_episodes, delta=0.1, *,
                     regularized=True, scale_mse=1.0, scale_opt=1.0):
    """Confidence widths (regression, optimism) for a whole run.

    The regression width is ``scale_mse * sqrt(d) * H * sqrt(log(16 * T
    / delta))``.  The optimism width is ``scale_opt * d * H * sqrt(log(
    16 * d * T / delta))`` for unregularized runs and exactly ``H``
    times that for regularized ones (the regularized value recursion
    compounds quadratically in the horizon, the unregularized one only
    linearly).  The absolute constants in front are not pinned down by
    the regret analysis, hence the scale knobs; defaults of 1 keep the
    widths conservative.
    """
    feature_dim = int(feature_dim)
    horizon = int(horizon)
    num_episodes = int(num_episodes)
    delta = float(delta)
    scale_mse = float(scale_mse)
    scale_opt = float(scale_opt)
    if feature_dim < 1:
        raise ValueError(f"feature_dim must be >= 1, got {feature_dim}")
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if num_episodes < 1:
        raise ValueError(f"num_episodes must be >= 1, got {num_episodes}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    for name, scale in (("scale_mse", scale_mse), ("scale_opt", scale_opt)):
        if not np.isfinite(scale) or scale < 0.0:
            raise ValueError(f"{name} must be finite and >= 0, got {scale}")
    width_mse = scale_mse * np.sqrt(feature_dim) * horizon * np.sqrt(
        np.log(16.0 * num_episodes / delta))
    width_opt = scale_opt * feature_dim * horizon * np.sqrt(
        np.log(16.0 * feature_dim * num_episodes / delta))
    if regularized:
        width_opt *= horizon
    return float(width_mse), float(width_opt)


@dataclass
class MarkovLearnerState:
    """Mutable per-run state of the episodic learner.

    ``episode_index`` is the 1-based index of the next episode to play.
    Each ``ridge[h]`` holds only the design matrix of the step-``h``
    samples (targets are folded in per sweep, since the Bellman targets
    move as the value tables move); ``reward_phi[h]`` accumulates
    ``reward * phi`` and ``next_phi[h, s']`` accumulates the features
    of samples that moved to ``s'``, so a regression against any value
    table is a single linear solve.  After ``t`` completed episodes
    every ``ridge[h]`` has absorbed exactly ``2 t`` samples, mirrored
    per trajectory in ``dataset_plus`` / ``dataset_minus``.  Policy,
    value, and Q tables are rewritten by each sweep; ``warm_logits``
    and ``support_hints`` carry the per-(step, state) stage solves into
    the next episode as warm starts.
    """

    projection: ProjectionSpec
    width_mse: float
    width_opt: float
    ridge: list
    reward_phi: np.ndarray
    next_phi: np.ndarray
    theta_mse: np.ndarray
    theta_plus: np.ndarray
    theta_minus: np.ndarray
    values_mse: np.ndarray
    values_plus: np.ndarray
    values_minus: np.ndarray
    q_mse: np.ndarray
    q_plus: np.ndarray
    q_minus: np.ndarray
    mu: np.ndarray = None
    nu: np.ndarray = None
    mu_tilde: np.ndarray = None
    nu_tilde: np.ndarray = None
    dataset_plus: list = field(default_factory=list)
    dataset_minus: list = field(default_factory=list)
    episode_index: int = 1
    warm_logits: list = None
    support_hints: list = None

    @classmethod
    def initial(cls, mdp, beta, num_episodes, lam=1.0, delta=0.1,
                scale_mse=1.0, scale_opt=1.0):
        """Fresh state sized for ``mdp`` over ``num_episodes`` episodes."""
        h_, s_ = mdp.horizon, mdp.num_states
        u_, v_ = mdp.num_max_actions, mdp.num_min_actions
        d = mdp.feature_dim
        width_mse, width_opt = bonus_parameters(
            d, h_, num_episodes, delta, regularized=float(beta) > 0.0,
            scale_mse=scale_mse, scale_opt=scale_opt)
        return cls(
            projection=ProjectionSpec.for_game(h_, beta),
            width_mse=width_mse,
            width_opt=width_opt,
            ridge=[RidgeState(d, lam) for _ in range(h_)],
            reward_phi=np.zeros((h_, d)),
            next_phi=np.zeros((h_, s_, d)),
            theta_mse=np.zeros((h_, d)),
            theta_plus=np.zeros((h_, d)),
            theta_minus=np.zeros((h_, d)),
            values_mse=np.zeros((h_ + 1, s_)),
            values_plus=np.zeros((h_ + 1, s_)),
            values_minus=np.zeros((h_ + 1, s_)),
            q_mse=np.zeros((h_, s_, u_, v_)),
            q_plus=np.zeros((h_, s_, u_, v_)),
            q_minus=np.zeros((h_, s_, u_, v_)),
            mu=np.full((h_, s_, u_), 1.0 / u_),
            nu=np.full((h_, s_, v_), 1.0 / v_),
            mu_tilde=np.full((h_, s_, u_), 1.0 / u_),
            nu_tilde=np.full((h_, s_, v_), 1.0 / v_),
            warm_logits=[None] * h_,
            support_hints=[None] * h_,
        )


@dataclass(frozen=True)
class MarkovLearnerEpisode:
    """Per-episode record emitted by ``markov_learner_episode``.

    ``gap``, ``violation``, and ``counts`` are None on episodes whose
    diagnostics were skipped (evaluation stride).  ``counts`` maps each
    ``VIOLATION_KEYS`` entry to the number of table cells violating
    that check this episode.
    """

    episode_index: int
    gap: float
    violation: bool
    max_bonus: float
    ne_iters: int
    counts: dict


def _theta_table(state, which):
    if which not in ESTIMATE_KINDS:
        raise ValueError(
            f"which must be one of {ESTIMATE_KINDS}, got {which!r}")
    return {"mse": state.theta_mse, "plus": state.theta_plus,
            "minus": state.theta_minus}[which]


def bellman_regress(state, h, target_values, which):
    """Ridge-regress step ``h`` samples onto reward + continuation.

    Solves for the weight vector whose inner product with each sample's
    features tracks ``reward + target_values[next_state]`` over every
    sample absorbed at step ``h``, under the ridge design already
    accumulated.  The result is stored as the ``which`` parameter
    vector of the state (``mse``/``plus``/``minus``) and returned.  An
    empty dataset yields the zero vector.
    """
    table = _theta_table(state, which)
    h = int(h)
    if not 0 <= h < len(state.ridge):
        raise ValueError(
            f"step must lie in [0, {len(state.ridge)}), got {h}")
    target_values = np.asarray(target_values, dtype=float)
    num_states = state.next_phi.shape[1]
    if target_values.shape != (num_states,):
        raise DimensionMismatch(
            f"target_values has shape {target_values.shape}, expected "
            f"({num_states},)")
    moment = state.reward_phi[h] + target_values @ state.next_phi[h]
    theta = state.ridge[h].sigma_inv @ moment
    table[h] = theta
    return theta


def exploration_bonuses(state, h, phi):
    """Bonuses granted to one feature vector at step ``h``.

    Returns ``(regression, optimism, combined)`` where each of the
    first two is its confidence width times the elliptical leverage of
    ``phi`` under the step's design matrix, and the combined bonus --
    the one the shifted Q tables actually receive -- is the optimism
    bonus plus twice the regression bonus, covering both the parameter
    uncertainty and the regression's own target error.
    """
    leverage = state.ridge[int(h)].mahalanobis(phi)
    b_mse = state.width_mse * leverage
    b_opt = state.width_opt * leverage
    return b_mse, b_opt, b_opt + 2.0 * b_mse


def markov_learner_sweep(state, mdp, beta, refs, *, tol=DEFAULT_NE_TOL,
                         max_iters=DEFAULT_NE_MAX_ITERS):
    """One backward pass updating every table of ``state`` in place.

    For each step from the last to the first: regress the three Bellman
    targets, clamp the induced Q tables (the per-player ones shifted by
    the combined bonus), solve the stage games on the unshifted table,
    tilt the per-player best responses on the shifted tables, and roll
    the three value tables one step back.  Touches only the feature
    tensor and shape attributes of ``mdp``, never its dynamics.
    Returns ``(total stage-solver iterations, largest combined bonus)``.
    """
    beta = float(beta)
    mu_ref, nu_ref = _unpack_refs(mdp, refs)
    _require_positive_refs(beta, mu_ref, nu_ref)
    num_states = mdp.num_states
    features = mdp.features
    total_iters = 0
    peak_bonus = 0.0
    for h in reversed(range(mdp.horizon)):
        theta_mse = bellman_regress(state, h, state.values_mse[h + 1], "mse")
        theta_plus = bellman_regress(state, h, state.values_plus[h + 1],
                                     "plus")
        theta_minus = bellman_regress(state, h, state.values_minus[h + 1],
                                      "minus")
        leverage = np.sqrt(np.maximum(np.einsum(
            "suvd,de,suve->suv", features, state.ridge[h].sigma_inv,
            features), 0.0))
        bonus = state.width_opt * leverage \
            + 2.0 * (state.width_mse * leverage)
        peak_bonus = max(peak_bonus, float(bonus.max()))
        q_mse = state.projection.clamp(h, "mse", features @ theta_mse)
        q_plus = state.projection.clamp(
            h, "plus", features @ theta_plus + bonus)
        q_minus = state.projection.clamp(
            h, "minus", features @ theta_minus - bonus)

        if beta == 0.0:
            mu_h = np.empty_like(state.mu[h])
            nu_h = np.empty_like(state.nu[h])
            hints = state.support_hints[h] or [None] * num_states
            new_hints = []
            for s in range(num_states):
                mu_s, nu_s, _, nit, supports = _solve_beta0(
                    q_mse[s], mu_ref[h, s], nu_ref[h, s], tol,
                    support_hint=hints[s])
                mu_h[s], nu_h[s] = mu_s, nu_s
                total_iters += int(nit)
                new_hints.append(supports)
            state.support_hints[h] = new_hints
        else:
            mu_h, nu_h, lmu, lnu, _, iters = _entropic_saddle_batch(
                q_mse, beta, np.log(mu_ref[h]), np.log(nu_ref[h]),
                tol, max_iters, init_logs=state.warm_logits[h])
            state.warm_logits[h] = (lmu, lnu)
            total_iters += int(iters.sum())

        mu_t = gibbs_tilt_rows(
            mu_ref[h], np.einsum("suv,sv->su", q_plus, nu_h), beta)
        nu_t = gibbs_tilt_rows(
            nu_ref[h], -np.einsum("suv,su->sv", q_minus, mu_h), beta)

        mid_mse = np.einsum("suv,su,sv->s", q_mse, mu_h, nu_h)
        mid_plus = np.einsum("suv,su,sv->s", q_plus, mu_t, nu_h)
        mid_minus = np.einsum("suv,su,sv->s", q_minus, mu_h, nu_t)
        if beta > 0.0:
            kl_mu = kl_divergence_rows(mu_h, mu_ref[h])
            kl_nu = kl_divergence_rows(nu_h, nu_ref[h])
            kl_mu_t = kl_divergence_rows(mu_t, mu_ref[h])
            kl_nu_t = kl_divergence_rows(nu_t, nu_ref[h])
            mid_mse += beta * (kl_nu - kl_mu)
            mid_plus += beta * (kl_nu - kl_mu_t)
            mid_minus += beta * (kl_nu_t - kl_mu)

        state.q_mse[h], state.q_plus[h] = q_mse, q_plus
        state.q_minus[h] = q_minus
        state.mu[h], state.nu[h] = mu_h, nu_h
        state.mu_tilde[h], state.nu_tilde[h] = mu_t, nu_t
        state.values_mse[h] = mid_mse
        state.values_plus[h] = mid_plus
        state.values_minus[h] = mid_minus
    return total_iters, peak_bonus


def _absorb_trajectory(state, mdp, trajectory):
    for h, (s, i, j, reward, nxt) in enumerate(trajectory):
        phi = mdp.features[s, i, j]
        state.ridge[h].absorb(phi, 0.0)
        state.reward_phi[h] += reward * phi
        state.next_phi[h, nxt] += phi


def _episode_diagnostics(state, mdp, beta, refs):
    """Exact gap of the current pair plus optimism violation counts.

    Consumes no randomness: everything is computed from the state's
    tables and exact backward inductions on the true environment.
    """
    br_max = best_response_value_markov(mdp, state.nu, beta, refs,
                                        side="max")
    br_min = best_response_value_markov(mdp, state.mu, beta, refs,
                                        side="min")
    gap = float(br_max.v1 - br_min.v1)
    q_current = evaluate_pair(mdp, state.mu, state.nu, beta,
                              refs).action_values
    q_tilted = evaluate_pair(mdp, state.mu_tilde, state.nu, beta,
                             refs).action_values
    slack = DIAGNOSTIC_SLACK
    counts = {
        "below_mse": int(np.sum(state.q_plus < state.q_mse - slack)),
        "below_current": int(np.sum(state.q_plus < q_current - slack)),
        "below_tilted": int(np.sum(state.q_plus < q_tilted - slack)),
        "below_best_response": int(
            np.sum(state.q_plus < br_max.action_values - slack)),
        "gap_bound": int(np.sum(
            2.0 * np.abs(state.q_plus - state.q_mse)
            < np.abs(state.q_plus - q_current) - slack)),
    }
    violation = any(count > 0 for count in counts.values())
    return gap, violation, counts


def markov_learner_episode(state, mdp, beta, refs, rng, *,
                           tol=DEFAULT_NE_TOL,
                           max_iters=DEFAULT_NE_MAX_ITERS,
                           evaluate_gap=True):
    """Execute one episode, updating ``state`` in place.

    Runs the backward sweep on the data gathered so far, draws one
    shared initial state, plays the two coupled trajectories --
    (tilted max, current min) and (current max, tilted min) -- and
    absorbs both.  Draws come from ``rng`` in a fixed order (initial
    state, then each trajectory's per-step action pair and transition),
    and diagnostics consume no randomness, so runs are reproducible
    from the seed alone and unaffected by the evaluation stride.
    Returns the episode's ``MarkovLearnerEpisode`` record.
    """
    ne_iters, max_bonus = markov_learner_sweep(
        state, mdp, beta, refs, tol=tol, max_iters=max_iters)
    init_state = draw_categorical(rng, mdp.initial_dist)
    tau_plus = sample_trajectory(mdp, state.mu_tilde, state.nu, rng,
                                 init_state=init_state)
    tau_minus = sample_trajectory(mdp, state.mu, state.nu_tilde, rng,
                                  init_state=init_state)
    _absorb_trajectory(state, mdp, tau_plus)
    state.dataset_plus.append(tau_plus)
    _absorb_trajectory(state, mdp, tau_minus)
    state.dataset_minus.append(tau_minus)

    gap = violation = counts = None
    if evaluate_gap:
        gap, violation, counts = _episode_diagnostics(state, mdp, beta, refs)
    record = MarkovLearnerEpisode(state.episode_index, gap, violation,
                                  float(max_bonus), int(ne_iters), counts)
    state.episode_index += 1
    return record


def run_markov_learner(mdp, beta, num_episodes, *, refs=None, seed=None,
                       lam=1.0, delta=0.1, scale_mse=1.0, scale_opt=1.0,
                       tol=DEFAULT_NE_TOL, max_iters=DEFAULT_NE_MAX_ITERS,
                       eval_stride=1):
    """Run the episodic learner for ``num_episodes`` episodes.

    Returns the ``RegretTrace`` of every evaluated episode (all of them
    at the default stride of 1); ``trace.extras`` holds the per-episode
    optimism violation counts under the ``VIOLATION_KEYS`` names.
    ``refs`` defaults to the uniform pair.  With ``eval_stride = k``
    only episodes 1, k+1, 2k+1, ... are evaluated; diagnostics consume
    no randomness, so the stride never perturbs the learning path
    itself.  If a stage solver fails, the NoConvergence it raises is
    re-raised with the episodes completed so far attached as
    ``partial_trace``.
    """
    if refs is None:
        refs = uniform_references(mdp)
    refs = _unpack_refs(mdp, refs)
    eval_stride = int(eval_stride)
    if eval_stride < 1:
        raise ValueError(f"eval_stride must be >= 1, got {eval_stride}")
    rng = np.random.default_rng(seed)
    state = MarkovLearnerState.initial(mdp, beta, num_episodes, lam, delta,
                                       scale_mse, scale_opt)
    trace = RegretTrace()
    for key in VIOLATION_KEYS:
        trace.extras[key] = []
    for t in range(1, int(num_episodes) + 1):
        evaluate = (t - 1) % eval_stride == 0
        try:
            record = markov_learner_episode(
                state, mdp, beta, refs, rng, tol=tol, max_iters=max_iters,
                evaluate_gap=evaluate)
        except NoConvergence as exc:
            exc.partial_trace = trace
            raise
        if evaluate:
            trace.append(record.episode_index, record.gap, record.violation,
                         record.max_bonus, record.ne_iters)
            for key in VIOLATION_KEYS:
                trace.extras[key].append(record.counts[key])
    return trace
