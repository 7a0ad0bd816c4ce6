"""Finite-horizon two-player zero-sum Markov games with linear structure.

An environment couples a shared state process with a matrix game at
every (step, state): transition kernels and rewards are inner products
of a per-cell feature vector with per-step weight vectors, so tabular
instantiations (one-hot features) realize the structure exactly and a
low-rank generator provides genuinely compressed instances.

The module also holds the exact oracles everything downstream is
measured against: policy-pair evaluation, best-response values, true
regularized equilibria (all by backward induction), and the resulting
duality gaps.  Step indices run h = 0..H-1 internally with the
convention V_H == 0.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NoConvergence, ParseError
from .matrix_game import DEFAULT_DRIFT_TOL, _entropic_saddle_batch, _solve_beta0
from .numerics import (
    as_distribution,
    draw_categorical,
    gibbs_tilt_rows,
    kl_divergence_rows,
    soft_value_rows,
)

TRANSITION_SUM_TOL = 1e-9   # row sums of every kernel must be 1 within this
REWARD_RANGE_TOL = 1e-9     # rewards may stray this far outside [0, 1]
NORM_BOUND_TOL = 1e-9       # slack on the feature/weight norm bounds
SERIAL_FORMAT = "linear-mdp-v1"


@dataclass
class LinearMDP:
    """A finite two-player environment with linearly realized dynamics.

    features: (S, U, V, d) per-cell feature vectors, norm <= 1.
    transition_factors: (H, d, S) per-step factor tables giving
    P_h(s'|s,i,j) = features[s,i,j] @ transition_factors[h,:,s'].
    reward_weights: (H, d) per-step weights giving
    r_h(s,i,j) = features[s,i,j] @ reward_weights[h].
    initial_dist: initial state distribution.  Dense kernels and rewards
    are precomputed and cached at construction.
    """

    horizon: int
    features: np.ndarray
    transition_factors: np.ndarray
    reward_weights: np.ndarray
    initial_dist: np.ndarray
    seed: int = None
    generator: str = None
    rescale_factor: float = 1.0

    def __post_init__(self):
        self.horizon = int(self.horizon)
        self.features = np.asarray(self.features, dtype=float)
        self.transition_factors = np.asarray(
            self.transition_factors, dtype=float)
        self.reward_weights = np.asarray(self.reward_weights, dtype=float)
        self.initial_dist = as_distribution(self.initial_dist, "initial_dist")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if self.features.ndim != 4:
            raise ValueError(
                f"features must be (S, U, V, d), got {self.features.shape}")
        s, u, v, d = self.features.shape
        if self.transition_factors.shape != (self.horizon, d, s):
            raise DimensionMismatch(
                f"transition_factors has shape "
                f"{self.transition_factors.shape}, expected "
                f"{(self.horizon, d, s)}")
        if self.reward_weights.shape != (self.horizon, d):
            raise DimensionMismatch(
                f"reward_weights has shape {self.reward_weights.shape}, expected "
                f"{(self.horizon, d)}")
        if self.initial_dist.shape != (s,):
            raise DimensionMismatch(
                f"initial_dist has shape {self.initial_dist.shape}, "
                f"expected ({s},)")
        for arr, name in ((self.features, "features"),
                          (self.transition_factors, "transition_factors"),
                          (self.reward_weights, "reward_weights")):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")

        flat = self.features.reshape(-1, d)
        norms = np.linalg.norm(flat, axis=1)
        if norms.max() > 1.0 + NORM_BOUND_TOL:
            raise ValueError(
                f"feature norms must be <= 1, max is {norms.max()!r}")
        root_d = np.sqrt(d)
        reward_weight_norms = np.linalg.norm(self.reward_weights, axis=1)
        if reward_weight_norms.max() > root_d + NORM_BOUND_TOL:
            raise ValueError(
                f"reward weight norms must be <= sqrt(d), max is "
                f"{reward_weight_norms.max()!r}")
        total_measure = self.transition_factors.sum(axis=2)      # (H, d)
        measure_norms = np.linalg.norm(total_measure, axis=1)
        if measure_norms.max() > root_d + NORM_BOUND_TOL:
            raise ValueError(
                f"transition weight norms must be <= sqrt(d), max is "
                f"{measure_norms.max()!r}")

        # dense caches: kernels (H, S, U, V, S) and rewards (H, S, U, V)
        kernels = np.einsum("suvd,hdt->hsuvt", self.features,
                            self.transition_factors)
        rewards = np.einsum("suvd,hd->hsuv", self.features, self.reward_weights)
        if kernels.min() < -TRANSITION_SUM_TOL:
            raise ValueError(
                f"transition kernel has negative mass {kernels.min()!r}")
        sums = kernels.sum(axis=4)
        if np.max(np.abs(sums - 1.0)) > TRANSITION_SUM_TOL:
            raise ValueError("transition rows must sum to 1 within "
                             f"{TRANSITION_SUM_TOL}")
        if rewards.min() < -REWARD_RANGE_TOL or \
                rewards.max() > 1.0 + REWARD_RANGE_TOL:
            raise ValueError(
                f"rewards must lie in [0, 1], range is "
                f"[{rewards.min()!r}, {rewards.max()!r}]")
        self.kernels = np.clip(kernels, 0.0, None)
        self.rewards = np.clip(rewards, 0.0, 1.0)

    @property
    def num_states(self):
        return self.features.shape[0]

    @property
    def num_max_actions(self):
        return self.features.shape[1]

    @property
    def num_min_actions(self):
        return self.features.shape[2]

    @property
    def feature_dim(self):
        return self.features.shape[3]


@dataclass
class MarkovPolicy:
    """Per-(step, state) mixed strategy: table of shape (H, S, A)."""

    table: np.ndarray

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=float)
        if self.table.ndim != 3:
            raise ValueError(
                f"policy table must be (H, S, A), got {self.table.shape}")
        if not np.all(np.isfinite(self.table)):
            raise ValueError("policy table has non-finite entries")
        if self.table.min() < 0:
            raise ValueError("policy table has negative entries")
        sums = self.table.sum(axis=2)
        if np.max(np.abs(sums - 1.0)) > 1e-9:
            raise ValueError("policy rows must each sum to 1 within 1e-9")

    @classmethod
    def uniform(cls, horizon, num_states, num_actions):
        return cls(np.full((horizon, num_states, num_actions),
                           1.0 / num_actions))

    @property
    def horizon(self):
        return self.table.shape[0]


def uniform_references(mdp):
    """Uniform (max-side, min-side) reference policies for ``mdp``."""
    return (MarkovPolicy.uniform(mdp.horizon, mdp.num_states,
                                 mdp.num_max_actions),
            MarkovPolicy.uniform(mdp.horizon, mdp.num_states,
                                 mdp.num_min_actions))


def _policy_table(policy, horizon, num_states, num_actions, name):
    table = policy.table if isinstance(policy, MarkovPolicy) else \
        np.asarray(policy, dtype=float)
    if table.shape != (horizon, num_states, num_actions):
        raise DimensionMismatch(
            f"{name} has shape {table.shape}, expected "
            f"{(horizon, num_states, num_actions)}")
    return table


def _unpack_refs(mdp, refs):
    mu_ref, nu_ref = refs
    mu_ref = _policy_table(mu_ref, mdp.horizon, mdp.num_states,
                           mdp.num_max_actions, "mu_ref")
    nu_ref = _policy_table(nu_ref, mdp.horizon, mdp.num_states,
                           mdp.num_min_actions, "nu_ref")
    return mu_ref, nu_ref


def _require_positive_refs(beta, mu_ref, nu_ref):
    if beta > 0 and (mu_ref.min() <= 0 or nu_ref.min() <= 0):
        raise ValueError("references must be strictly positive when beta > 0")


# ---------------------------------------------------------------------------
# generators


def make_tabular_mdp(horizon, num_states, num_max_actions, num_min_actions,
                     seed):
    """Sample a tabular instance: one-hot features over (s, i, j) cells.

    The feature dimension is d = S*U*V, flattened as (s*U + i)*V + j.
    Transition rows are Dirichlet(1) draws, reward weights Uniform[0,1],
    and the initial distribution a Dirichlet(1) draw; every structural
    norm bound then holds by construction (rescale_factor stays 1).
    """
    rng = np.random.default_rng(seed)
    s, u, v = num_states, num_max_actions, num_min_actions
    d = s * u * v
    features = np.eye(d).reshape(s, u, v, d)
    initial_dist = rng.dirichlet(np.ones(s))
    transition_factors = np.empty((horizon, d, s))
    reward_weights = np.empty((horizon, d))
    for h in range(horizon):
        transition_factors[h] = rng.dirichlet(np.ones(s), size=d)
        reward_weights[h] = rng.uniform(0.0, 1.0, size=d)
    return LinearMDP(horizon, features, transition_factors, reward_weights,
                     initial_dist, seed=seed, generator="tabular")


def make_latent_mdp(horizon, num_states, num_max_actions, num_min_actions,
                    latent_dim, seed):
    """Sample a low-rank instance with d = latent_dim shared components.

    Features are Dirichlet mixtures over latent components, each latent
    component carries its own per-step transition distribution and a
    reward weight in [0, 1]; kernels and rewards are then convex
    mixtures, so stochasticity, the [0,1] reward range, and all norm
    bounds hold by construction (rescale_factor stays 1).
    """
    rng = np.random.default_rng(seed)
    s, u, v, d = num_states, num_max_actions, num_min_actions, latent_dim
    initial_dist = rng.dirichlet(np.ones(s))
    features = rng.dirichlet(np.ones(d), size=s * u * v).reshape(s, u, v, d)
    transition_factors = np.empty((horizon, d, s))
    reward_weights = np.empty((horizon, d))
    for h in range(horizon):
        transition_factors[h] = rng.dirichlet(np.ones(s), size=d)
        reward_weights[h] = rng.uniform(0.0, 1.0, size=d)
    return LinearMDP(horizon, features, transition_factors, reward_weights,
                     initial_dist, seed=seed, generator="latent")


# ---------------------------------------------------------------------------
# trajectory sampling


def sample_trajectory(mdp, mu, nu, rng, init_state=None):
    """Roll out one episode under the pair (mu, nu).

    Returns a list of (state, max_action, min_action, reward,
    next_state) tuples, one per step.  The initial state is drawn from
    initial_dist unless ``init_state`` pins it (used to couple episode pairs).
    """
    mu = _policy_table(mu, mdp.horizon, mdp.num_states,
                       mdp.num_max_actions, "mu")
    nu = _policy_table(nu, mdp.horizon, mdp.num_states,
                       mdp.num_min_actions, "nu")
    state = draw_categorical(rng, mdp.initial_dist) if init_state is None \
        else int(init_state)
    steps = []
    for h in range(mdp.horizon):
        i = draw_categorical(rng, mu[h, state])
        j = draw_categorical(rng, nu[h, state])
        reward = float(mdp.rewards[h, state, i, j])
        nxt = draw_categorical(rng, mdp.kernels[h, state, i, j])
        steps.append((state, i, j, reward, nxt))
        state = nxt
    return steps


# ---------------------------------------------------------------------------
# exact oracles (backward induction)


@dataclass
class PairEvaluation:
    """Exact value of a fixed policy pair: V tables, Q tables, and
    the initial value initial_dist @ V_1."""

    v1: float
    values: np.ndarray        # (H, S)
    action_values: np.ndarray  # (H, S, U, V)


@dataclass
class BestResponseMarkov:
    """Exact best-response value against a fixed opponent policy."""

    v1: float
    values: np.ndarray         # (H, S)
    action_values: np.ndarray  # (H, S, U, V): Q of (responder vs fixed)
    policy: MarkovPolicy       # the responding player's optimal policy


@dataclass
class NEMarkov:
    """A solved equilibrium of the whole Markov game with certificate."""

    mu: MarkovPolicy
    nu: MarkovPolicy
    v1: float
    values: np.ndarray         # (H, S)
    action_values: np.ndarray  # (H, S, U, V)
    certified_gap: float
    iterations: int


def evaluate_pair(mdp, mu, nu, beta, refs):
    """Exact regularized value of the pair by backward induction.

    V_h(s) = E_{mu,nu}[Q_h] - beta*KL(mu_h||mu_ref,h)(s)
                            + beta*KL(nu_h||nu_ref,h)(s),
    Q_h = r_h + P_h V_{h+1}, V_H == 0.
    """
    mu = _policy_table(mu, mdp.horizon, mdp.num_states,
                       mdp.num_max_actions, "mu")
    nu = _policy_table(nu, mdp.horizon, mdp.num_states,
                       mdp.num_min_actions, "nu")
    mu_ref, nu_ref = _unpack_refs(mdp, refs)
    h_, s_ = mdp.horizon, mdp.num_states
    values = np.zeros((h_, s_))
    action_values = np.zeros((h_, s_, mdp.num_max_actions,
                              mdp.num_min_actions))
    v_next = np.zeros(s_)
    for h in reversed(range(h_)):
        q = mdp.rewards[h] + mdp.kernels[h] @ v_next
        mid = np.einsum("suv,su,sv->s", q, mu[h], nu[h])
        if beta > 0:
            mid = mid - beta * kl_divergence_rows(mu[h], mu_ref[h])
            mid = mid + beta * kl_divergence_rows(nu[h], nu_ref[h])
        action_values[h] = q
        values[h] = mid
        v_next = mid
    return PairEvaluation(float(mdp.initial_dist @ values[0]), values,
                          action_values)


def best_response_value_markov(mdp, policy, beta, refs, side="max"):
    """Exact best-response value against ``policy`` for one side.

    side="max": the max player best-responds to the min policy given;
    side="min": the min player best-responds to the max policy given.
    Each stage problem is solved in closed form (a Gibbs tilt of the
    responder's reference), so the result is the exact optimum over all
    Markov policies of the responding player.
    """
    if side not in ("max", "min"):
        raise ValueError(f"side must be 'max' or 'min', got {side!r}")
    mu_ref, nu_ref = _unpack_refs(mdp, refs)
    _require_positive_refs(beta, mu_ref, nu_ref)
    h_, s_ = mdp.horizon, mdp.num_states
    if side == "max":
        fixed = _policy_table(policy, h_, s_, mdp.num_min_actions, "nu")
        own_ref, fixed_ref = mu_ref, nu_ref
        responder_actions = mdp.num_max_actions
    else:
        fixed = _policy_table(policy, h_, s_, mdp.num_max_actions, "mu")
        own_ref, fixed_ref = nu_ref, mu_ref
        responder_actions = mdp.num_min_actions

    values = np.zeros((h_, s_))
    action_values = np.zeros((h_, s_, mdp.num_max_actions,
                              mdp.num_min_actions))
    br_table = np.zeros((h_, s_, responder_actions))
    v_next = np.zeros(s_)
    for h in reversed(range(h_)):
        q = mdp.rewards[h] + mdp.kernels[h] @ v_next
        if side == "max":
            scores = np.einsum("suv,sv->su", q, fixed[h])
            vals = soft_value_rows(own_ref[h], scores, beta)
        else:
            scores = -np.einsum("suv,su->sv", q, fixed[h])
            vals = -soft_value_rows(own_ref[h], scores, beta)
        if beta > 0:
            penalty = beta * kl_divergence_rows(fixed[h], fixed_ref[h])
            vals = vals + penalty if side == "max" else vals - penalty
        br_table[h] = gibbs_tilt_rows(own_ref[h], scores, beta)
        action_values[h] = q
        values[h] = vals
        v_next = vals
    return BestResponseMarkov(float(mdp.initial_dist @ values[0]), values,
                              action_values, MarkovPolicy(br_table))


def dual_gap_markov(mdp, mu, nu, beta, refs):
    """Total exploitability of the pair at the initial distribution."""
    brv_max = best_response_value_markov(mdp, nu, beta, refs, side="max")
    brv_min = best_response_value_markov(mdp, mu, beta, refs, side="min")
    return brv_max.v1 - brv_min.v1


def solve_true_ne_markov(mdp, beta, refs, tol=1e-8, max_iters=100_000):
    """Exact regularized equilibrium of the whole game, with certificate.

    Backward induction where every (step, state) stage game is solved to
    tolerance tol / (H * S); the returned certified_gap is the full
    dual_gap_markov of the pair, re-solved at tighter stage tolerances
    if the first pass does not certify (it virtually always does).
    """
    mu_ref, nu_ref = _unpack_refs(mdp, refs)
    _require_positive_refs(beta, mu_ref, nu_ref)
    h_, s_ = mdp.horizon, mdp.num_states
    stage_tol = tol / (h_ * s_)
    for _ in range(3):
        mu, nu, values, action_values, iters = _ne_sweep(
            mdp, beta, mu_ref, nu_ref, stage_tol, max_iters)
        gap = dual_gap_markov(mdp, mu, nu, beta, (mu_ref, nu_ref))
        if gap <= tol:
            return NEMarkov(MarkovPolicy(mu), MarkovPolicy(nu),
                            float(mdp.initial_dist @ values[0]), values,
                            action_values, float(gap), int(iters))
        stage_tol /= 8.0
    raise NoConvergence(
        f"stage solves did not certify a whole-game gap <= {tol:.3e} "
        f"(best {gap:.3e})", best_gap=float(gap))


def _ne_sweep(mdp, beta, mu_ref, nu_ref, stage_tol, max_iters):
    """One backward-induction sweep of certified stage solves."""
    h_, s_ = mdp.horizon, mdp.num_states
    mu = np.zeros((h_, s_, mdp.num_max_actions))
    nu = np.zeros((h_, s_, mdp.num_min_actions))
    values = np.zeros((h_, s_))
    action_values = np.zeros((h_, s_, mdp.num_max_actions,
                              mdp.num_min_actions))
    v_next = np.zeros(s_)
    total_iters = 0
    for h in reversed(range(h_)):
        q = mdp.rewards[h] + mdp.kernels[h] @ v_next
        if beta > 0:
            # drift stopping keeps the stage policies pinned to the exact
            # stage equilibrium (a gap certificate alone leaves iterates
            # a distance ~ sqrt(gap/beta) away)
            mu_h, nu_h, _, _, _, iters = _entropic_saddle_batch(
                q, beta, np.log(mu_ref[h]), np.log(nu_ref[h]),
                stage_tol, max_iters, drift_tol=DEFAULT_DRIFT_TOL)
            total_iters += int(iters.sum())
        else:
            mu_h = np.zeros_like(mu[0])
            nu_h = np.zeros_like(nu[0])
            for s in range(s_):
                mu_h[s], nu_h[s], _, nit, _ = _solve_beta0(
                    q[s], mu_ref[h, s], nu_ref[h, s], stage_tol)
                total_iters += nit
        mid = np.einsum("suv,su,sv->s", q, mu_h, nu_h)
        if beta > 0:
            mid = mid - beta * kl_divergence_rows(mu_h, mu_ref[h])
            mid = mid + beta * kl_divergence_rows(nu_h, nu_ref[h])
        mu[h], nu[h] = mu_h, nu_h
        values[h] = mid
        action_values[h] = q
        v_next = mid
    return mu, nu, values, action_values, total_iters


# ---------------------------------------------------------------------------
# serialization


def save_mdp(mdp):
    """Serialize to a self-describing JSON text; floats round-trip
    bit-exactly (shortest-repr encoding)."""
    doc = {
        "format": SERIAL_FORMAT,
        "horizon": mdp.horizon,
        "num_states": mdp.num_states,
        "num_max_actions": mdp.num_max_actions,
        "num_min_actions": mdp.num_min_actions,
        "feature_dim": mdp.feature_dim,
        "features": mdp.features.tolist(),
        "transition_factors": mdp.transition_factors.tolist(),
        "reward_weights": mdp.reward_weights.tolist(),
        "initial_dist": mdp.initial_dist.tolist(),
        "seed": mdp.seed,
        "generator": mdp.generator,
        "rescale_factor": mdp.rescale_factor,
    }
    return json.dumps(doc, indent=1)


def load_mdp(text):
    """Parse a document produced by save_mdp.  Raises ParseError on
    malformed input; full structural validation re-runs on load."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno,
                         column=exc.colno) from exc
    if not isinstance(doc, dict):
        raise ParseError("expected a JSON object")
    if doc.get("format") != SERIAL_FORMAT:
        raise ParseError(
            f"expected a {SERIAL_FORMAT!r} document, got format "
            f"{doc.get('format')!r}")
    required = ("horizon", "features", "transition_factors",
                "reward_weights", "initial_dist")
    for key in required:
        if key not in doc:
            raise ParseError(f"missing field {key!r}")
    try:
        mdp = LinearMDP(
            horizon=doc["horizon"],
            features=np.asarray(doc["features"], dtype=float),
            transition_factors=np.asarray(doc["transition_factors"], dtype=float),
            reward_weights=np.asarray(doc["reward_weights"], dtype=float),
            initial_dist=np.asarray(doc["initial_dist"], dtype=float),
            seed=doc.get("seed"),
            generator=doc.get("generator"),
            rescale_factor=doc.get("rescale_factor", 1.0),
        )
    except (ValueError, DimensionMismatch) as exc:
        raise ParseError(f"document fails validation: {exc}") from exc
    declared = (doc.get("num_states"), doc.get("num_max_actions"),
                doc.get("num_min_actions"), doc.get("feature_dim"))
    actual = (mdp.num_states, mdp.num_max_actions, mdp.num_min_actions,
              mdp.feature_dim)
    if any(want is not None and want != got
           for want, got in zip(declared, actual)):
        raise ParseError(
            f"declared sizes {declared} disagree with array shapes {actual}")
    return mdp
