"""Reliability bounds, Monte Carlo validation, and benchmark statistics.

The quantitative core: the closed-form failure bound for a retry loop over
a generator with per-attempt success probability epsilon, the inverse
problem (minimum retry limit for a target workflow reliability), the
linear control-complexity budget, and the significance apparatus used by
the benchmark reports (exact Fisher test, Cohen's h for proportions).

Counting note: the closed-form bound counts *generation attempts*, so a
budget of R means R attempts. The executor's run config counts retries
after a free initial attempt (R retries = R + 1 attempts) and is therefore
strictly safer than the bound it is compared against.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import BoundViolationError
from .executor import RunOutcome, RunStatus


@dataclass(frozen=True)
class BoundParams:
    """Inputs to the reliability bounds."""

    epsilon: float
    r_max: int
    delta: Optional[float] = None
    k: int = 1
    n_guards: int = 1

    def __post_init__(self):
        if not (0.0 < self.epsilon <= 1.0):
            raise ValueError("epsilon must lie in (0, 1]")
        if self.r_max < 0:
            raise ValueError("r_max must be >= 0")
        if self.delta is not None and not (0.0 < self.delta < 1.0):
            raise ValueError("delta must lie in (0, 1)")
        if self.k < 1:
            raise ValueError("k must be >= 1")


def failure_bound(epsilon: float, r_max: int) -> float:
    """Worst-case probability that a node never passes within r_max attempts.

    Assumes a memoryless generator; feedback accumulation only improves on
    this, so the value is a conservative ceiling.
    """
    if not (0.0 < epsilon <= 1.0):
        raise ValueError("epsilon must lie in (0, 1]")
    if r_max < 0:
        raise ValueError("r_max must be >= 0")
    if epsilon == 1.0:
        # A certain generator cannot fail, including at a zero budget where
        # the power expression would degenerate to 0**0.
        return 0.0
    return (1.0 - epsilon) ** r_max


def min_retry_limit(delta: float, k: int, epsilon: float) -> int:
    """Smallest attempt budget R with (1 - (1-epsilon)^R)^k >= delta.

    Solved by direct search seeded from the closed form, which sidesteps
    float-boundary artifacts of a bare ceiling. A certain generator
    (epsilon = 1) needs no retries.
    """
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0, 1)")
    if k < 1:
        raise ValueError("k must be >= 1")
    if not (0.0 < epsilon <= 1.0):
        raise ValueError("epsilon must lie in (0, 1]")
    if epsilon == 1.0:
        return 0

    def satisfies(r: int) -> bool:
        return (1.0 - (1.0 - epsilon) ** r) ** k >= delta

    estimate = math.log(1.0 - delta ** (1.0 / k)) / math.log(1.0 - epsilon)
    r = max(0, math.ceil(estimate) - 2)
    while not satisfies(r):
        r += 1
    return r


def tree_size_bound(n_guards: int, r_max: int) -> int:
    """Worst-case size of the reachable decision tree: guards times budget."""
    if n_guards < 0 or r_max < 0:
        raise ValueError("arguments must be non-negative")
    return n_guards * r_max


def control_complexity_budget(reachable_states: int, r_max: int, n_guards: int) -> int:
    """Linear worst-case control cost over the reachable state space."""
    if reachable_states < 0 or r_max < 0 or n_guards < 0:
        raise ValueError("arguments must be non-negative")
    return reachable_states * r_max * n_guards


# ---------------------------------------------------------------------------
# Exact statistics


def fisher_exact_two_sided(
    successes_a: int, trials_a: int, successes_b: int, trials_b: int
) -> float:
    """Two-sided Fisher exact p for success counts in two groups.

    Sums hypergeometric point probabilities of all tables with the observed
    margins whose probability does not exceed the observed table's.
    Comparisons are done on exact integer weights, so no floating point
    enters until the final division.
    """
    if not (0 <= successes_a <= trials_a and 0 <= successes_b <= trials_b):
        raise ValueError("success counts must not exceed trial counts")
    if trials_a == 0 or trials_b == 0:
        raise ValueError("both groups need at least one trial")
    total_successes = successes_a + successes_b
    observed_weight = math.comb(trials_a, successes_a) * math.comb(
        trials_b, total_successes - successes_a
    )
    lo = max(0, total_successes - trials_b)
    hi = min(trials_a, total_successes)
    numerator = 0
    denominator = 0
    for k in range(lo, hi + 1):
        weight = math.comb(trials_a, k) * math.comb(trials_b, total_successes - k)
        denominator += weight
        if weight <= observed_weight:
            numerator += weight
    return numerator / denominator


def cohens_h(p1: float, p2: float) -> float:
    """Effect size for two proportions: absolute arcsine-transform gap."""
    if not (0.0 <= p1 <= 1.0 and 0.0 <= p2 <= 1.0):
        raise ValueError("proportions must lie in [0, 1]")
    return abs(2.0 * math.asin(math.sqrt(p2)) - 2.0 * math.asin(math.sqrt(p1)))


def significance_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


# ---------------------------------------------------------------------------
# Monte Carlo validation of the bounds


def _simulate_node(
    rng: random.Random, epsilon: float, attempts: int, improvement_delta: float
) -> bool:
    """One node-level retry loop; True iff some attempt passes."""
    for retry_index in range(attempts):
        p = min(1.0, epsilon + retry_index * improvement_delta)
        if rng.random() < p:
            return True
    return False


@dataclass(frozen=True)
class ValidationReport:
    mode: str
    trials: int
    empirical_failure_rate: float
    analytic_bound: float
    tolerance: float
    memoryless_failure_rate: Optional[float] = None


def monte_carlo_validate(
    params: BoundParams,
    mode: str = "memoryless",
    n_trials: int = 10_000,
    seed: int = 0,
    improvement_delta: float = 0.2,
    tolerance: Optional[float] = None,
) -> ValidationReport:
    """Simulate node retry loops and check them against the analytic bound.

    Raises BoundViolationError if the empirical failure rate exceeds the
    bound plus the sampling tolerance (default: three binomial sigmas), or
    if the improving mode fails to beat the memoryless baseline.
    """
    if n_trials < 1000:
        raise ValueError("n_trials must be >= 1000 for a meaningful check")
    if mode not in ("memoryless", "improving"):
        raise ValueError("mode must be 'memoryless' or 'improving'")
    bound = failure_bound(params.epsilon, params.r_max)
    if tolerance is None:
        tolerance = 3.0 * math.sqrt(max(bound * (1.0 - bound), 1e-12) / n_trials)
    delta = improvement_delta if mode == "improving" else 0.0
    rng = random.Random(seed)
    failures = sum(
        0 if _simulate_node(rng, params.epsilon, params.r_max, delta) else 1
        for _ in range(n_trials)
    )
    empirical = failures / n_trials
    memoryless_rate: Optional[float] = None
    if mode == "improving":
        base_rng = random.Random(seed)
        base_failures = sum(
            0 if _simulate_node(base_rng, params.epsilon, params.r_max, 0.0) else 1
            for _ in range(n_trials)
        )
        memoryless_rate = base_failures / n_trials
    if empirical > bound + tolerance:
        raise BoundViolationError(
            f"empirical failure rate {empirical:.4f} exceeds bound "
            f"{bound:.4f} + tolerance {tolerance:.4f}"
        )
    if mode == "improving" and params.epsilon < 1.0 and not empirical < memoryless_rate:
        raise BoundViolationError(
            f"improving mode ({empirical:.4f}) did not beat memoryless "
            f"({memoryless_rate:.4f})"
        )
    return ValidationReport(mode, n_trials, empirical, bound, tolerance, memoryless_rate)


def simulate_workflow_success_rate(
    epsilon: float, attempts_per_node: int, nodes: int, n_trials: int, seed: int = 0
) -> float:
    """Fraction of simulated workflows where every node passes in budget."""
    rng = random.Random(seed)
    successes = 0
    for _ in range(n_trials):
        if all(_simulate_node(rng, epsilon, attempts_per_node, 0.0) for _ in range(nodes)):
            successes += 1
    return successes / n_trials


# ---------------------------------------------------------------------------
# Benchmark summaries


@dataclass(frozen=True)
class TrialSummary:
    """Aggregates for one (task, model, mode) benchmark cell."""

    task_id: str
    model_id: str
    mode: str
    successes: int
    trials: int
    avg_attempts: float
    avg_retries: float
    wall_ms: float

    def __post_init__(self):
        if self.successes > self.trials:
            raise ValueError("successes cannot exceed trials")

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials if self.trials else 0.0


@dataclass(frozen=True)
class ComparisonStats:
    """Baseline vs guarded: gain, significance, effect size, compute cost."""

    gain_pp: float
    fisher_p: float
    cohens_h: float
    cost_multiplier: float
    gain_per_multiplier: float


def summarize(
    outcomes: Sequence[RunOutcome], task_id: str, model_id: str, mode: str
) -> TrialSummary:
    if not outcomes:
        raise ValueError("cannot summarize zero trials")
    trials = len(outcomes)
    successes = sum(1 for o in outcomes if o.status is RunStatus.SUCCESS)
    return TrialSummary(
        task_id=task_id,
        model_id=model_id,
        mode=mode,
        successes=successes,
        trials=trials,
        avg_attempts=sum(o.attempts for o in outcomes) / trials,
        avg_retries=sum(o.retries for o in outcomes) / trials,
        wall_ms=sum(o.wall_ms for o in outcomes),
    )


def compare(base: TrialSummary, guarded: TrialSummary) -> ComparisonStats:
    """Reliability gain of the guarded mode over the one-shot baseline.

    The cost multiplier is the mean number of generation calls per guarded
    trial; the baseline costs exactly one call by construction.
    """
    if (base.task_id, base.model_id) != (guarded.task_id, guarded.model_id):
        raise ValueError("summaries must describe the same task and model")
    gain_pp = (guarded.success_rate - base.success_rate) * 100.0
    p = fisher_exact_two_sided(
        base.successes, base.trials, guarded.successes, guarded.trials
    )
    h = cohens_h(base.success_rate, guarded.success_rate)
    multiplier = guarded.avg_attempts
    return ComparisonStats(
        gain_pp=gain_pp,
        fisher_p=p,
        cohens_h=h,
        cost_multiplier=multiplier,
        gain_per_multiplier=gain_pp / multiplier if multiplier else 0.0,
    )


def render_report_table(rows: Sequence[Dict]) -> str:
    """Text table: Model | Base | Guarded | Gain | Avg Retries, with stars."""
    header = ("Model", "Base", "Guarded", "Gain", "Avg Retries")
    body: List[Tuple[str, ...]] = []
    for row in rows:
        stars = significance_stars(row["fisher_p"])
        body.append(
            (
                str(row["model"]),
                f"{row['base_rate'] * 100:.0f}%",
                f"{row['guarded_rate'] * 100:.0f}%",
                f"{row['gain_pp']:+.0f}{stars}",
                f"{row['avg_retries']:.2f}",
            )
        )
    widths = [
        max(len(header[i]), *(len(r[i]) for r in body)) if body else len(header[i])
        for i in range(len(header))
    ]
    lines = [
        " | ".join(header[i].ljust(widths[i]) for i in range(len(header))),
        "-+-".join("-" * w for w in widths),
    ]
    for r in body:
        lines.append(" | ".join(r[i].ljust(widths[i]) for i in range(len(header))))
    return "\n".join(lines)
