"""Learning KL-regularized equilibria in two-player zero-sum games.

The package has three layers:

  * numerics + matrix_game: exact closed forms for KL-regularized
    bimatrix saddle points (soft values, Gibbs tilts, duality gaps) and
    a certified equilibrium solver;
  * markov_game: finite-horizon two-player environments with linearly
    realizable transitions/rewards, exact policy evaluation, and exact
    best responses by backward induction;
  * matrix_learner + markov_learner: optimistic self-play learners that
    estimate payoffs by ridge regression from noisy bandit feedback and
    steer exploration with elliptical confidence bonuses.

``harness`` and ``cli`` wrap all of it in reproducible, seeded
experiments with CSV traces and growth-model fitting.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigInvalid,
    DegenerateReference,
    DimensionMismatch,
    EnvironmentInvalid,
    InsufficientData,
    KLGamesError,
    NoConvergence,
    ParseError,
    SupportMismatch,
)
from .harness import (
    ExperimentConfig,
    FitEntry,
    FitReport,
    build_environment,
    fit_regret_models,
    read_trace_csv,
    render_regret_svg,
    run_experiment,
    write_trace_csv,
)
from .markov_game import (
    BestResponseMarkov,
    LinearMDP,
    MarkovPolicy,
    NEMarkov,
    PairEvaluation,
    best_response_value_markov,
    dual_gap_markov,
    evaluate_pair,
    load_mdp,
    make_latent_mdp,
    make_tabular_mdp,
    sample_trajectory,
    save_mdp,
    solve_true_ne_markov,
    uniform_references,
)
from .matrix_game import (
    KLMatrixGame,
    NESolution,
    PolicyPair,
    best_response_max,
    best_response_min,
    best_response_value_max,
    best_response_value_min,
    dual_gap,
    payoff_value,
    solve_ne,
)
from .markov_learner import (
    MarkovLearnerEpisode,
    MarkovLearnerState,
    ProjectionSpec,
    bellman_regress,
    bonus_parameters,
    exploration_bonuses,
    markov_learner_episode,
    markov_learner_sweep,
    run_markov_learner,
)
from .matrix_learner import (
    LinearPayoffOracle,
    MatrixLearnerRound,
    MatrixLearnerState,
    confidence_width,
    make_random_oracle,
    make_tabular_oracle,
    matrix_learner_step,
    run_matrix_learner,
)
from .numerics import (
    RidgeState,
    draw_categorical,
    gibbs_tilt,
    gibbs_tilt_rows,
    kl_divergence,
    kl_divergence_rows,
    mahalanobis,
    ridge_absorb,
    ridge_solve,
    soft_value,
    soft_value_rows,
)
from .traces import CSV_COLUMNS, RegretTrace

__all__ = [
    "ConfigInvalid",
    "DegenerateReference",
    "DimensionMismatch",
    "InsufficientData",
    "KLGamesError",
    "NoConvergence",
    "EnvironmentInvalid",
    "ParseError",
    "SupportMismatch",
    "ExperimentConfig",
    "FitEntry",
    "FitReport",
    "build_environment",
    "fit_regret_models",
    "read_trace_csv",
    "render_regret_svg",
    "run_experiment",
    "write_trace_csv",
    "BestResponseMarkov",
    "LinearMDP",
    "MarkovPolicy",
    "NEMarkov",
    "PairEvaluation",
    "best_response_value_markov",
    "dual_gap_markov",
    "evaluate_pair",
    "load_mdp",
    "make_latent_mdp",
    "make_tabular_mdp",
    "sample_trajectory",
    "save_mdp",
    "solve_true_ne_markov",
    "uniform_references",
    "KLMatrixGame",
    "NESolution",
    "PolicyPair",
    "best_response_max",
    "best_response_min",
    "best_response_value_max",
    "best_response_value_min",
    "dual_gap",
    "payoff_value",
    "solve_ne",
    "MarkovLearnerEpisode",
    "MarkovLearnerState",
    "ProjectionSpec",
    "bellman_regress",
    "bonus_parameters",
    "exploration_bonuses",
    "markov_learner_episode",
    "markov_learner_sweep",
    "run_markov_learner",
    "LinearPayoffOracle",
    "MatrixLearnerRound",
    "MatrixLearnerState",
    "confidence_width",
    "make_random_oracle",
    "make_tabular_oracle",
    "matrix_learner_step",
    "run_matrix_learner",
    "CSV_COLUMNS",
    "RegretTrace",
    "RidgeState",
    "draw_categorical",
    "gibbs_tilt",
    "gibbs_tilt_rows",
    "kl_divergence",
    "kl_divergence_rows",
    "mahalanobis",
    "ridge_absorb",
    "ridge_solve",
    "soft_value",
    "soft_value_rows",
]
