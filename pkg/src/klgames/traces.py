"""Per-round bookkeeping shared by the online learners.

The bandit matrix-game learner and the episodic Markov learner emit the
same record stream: at every evaluated round, the duality gap of the
current policy pair measured on the true (hidden) game, the running sum
of those gaps, the largest exploration bonus granted that round, an
optimism-violation flag, and the iteration count of the inner
equilibrium solve.  ``RegretTrace`` accumulates the stream, maintains
the running sum incrementally, and hands the columns to the experiment
harness under the exact names it writes to CSV.
"""

from dataclasses import dataclass, field

# Column names of the persisted regret CSV, in file order.  ``as_columns``
# returns its keys in this order and the harness writes them verbatim.
CSV_COLUMNS = (
    "t",
    "instant_gap",
    "cumulative_regret",
    "optimism_violation_flag",
    "max_bonus",
    "ne_solver_iters",
)


@dataclass
class RegretTrace:
    """Append-only record of an online learning run.

    One entry per *evaluated* round (runs may evaluate on a stride to
    save time; skipped rounds leave no row).  ``cumulative`` is kept as
    the exact running sum of ``gaps``, so ``final_regret`` is the total
    regret over the evaluated rounds.
    """

    rounds: list = field(default_factory=list)
    gaps: list = field(default_factory=list)
    cumulative: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    max_bonus: list = field(default_factory=list)
    ne_iters: list = field(default_factory=list)
    # Learner-specific side channels (e.g. per-kind violation counts for
    # the episodic learner).  Keys map to lists parallel to ``rounds``.
    # ``as_columns`` ignores this; the CSV schema stays fixed.
    extras: dict = field(default_factory=dict)

    def append(self, round_index, gap, violation, max_bonus, ne_iters):
        """Record one evaluated round.

        ``violation`` is truthy when the optimistic/pessimistic matrices
        failed to bracket the true payoffs elementwise this round.
        """
        gap = float(gap)
        self.rounds.append(int(round_index))
        self.gaps.append(gap)
        total = self.cumulative[-1] if self.cumulative else 0.0
        self.cumulative.append(total + gap)
        self.violations.append(bool(violation))
        self.max_bonus.append(float(max_bonus))
        self.ne_iters.append(int(ne_iters))

    def __len__(self):
        return len(self.rounds)

    @property
    def final_regret(self):
        """Sum of all recorded gaps (0.0 for an empty trace)."""
        return self.cumulative[-1] if self.cumulative else 0.0

    @property
    def violation_fraction(self):
        """Fraction of evaluated rounds whose optimism check failed."""
        if not self.violations:
            return 0.0
        return sum(self.violations) / len(self.violations)

    def as_columns(self):
        """Columns keyed by CSV name, ready for the harness writer.

        Flags are rendered as 0/1 integers; everything else is returned
        as recorded.
        """
        return {
            "t": list(self.rounds),
            "instant_gap": list(self.gaps),
            "cumulative_regret": list(self.cumulative),
            "optimism_violation_flag": [int(v) for v in self.violations],
            "max_bonus": list(self.max_bonus),
            "ne_solver_iters": list(self.ne_iters),
        }
