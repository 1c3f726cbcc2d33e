"""Row-scaled truncated-SVD estimation of per-unit treatment effect paths.

For each action a the pipeline is:

  1. empirical row propensities  p_hat_i(a) = max(mean_j D_ij(a), 1/m);
  2. row scaling                 Ytilde_ij(a) = D_ij(a) Y_ij / p_hat_i(a);
  3. top (rank_cap + 1) singular triplets of the scaled matrix;
  4. rank choice: the largest s <= rank_cap whose spectral gap
     sigma_s - sigma_{s+1} meets the action's threshold tau_a (else 0);
  5. the rank-s truncation is the outcome estimate A_hat(a).

The effect estimate is M_hat = A_hat(1) - A_hat(0).  The division in step 2
uses the floored p_hat exactly as written; the floor exists only to prevent
division by zero for all-control or all-treated rows and no other
regularization is applied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ValidationError
from .linalg import as_matrix, singular_gaps, svd_truncated
from .model import ObservedPanel, PanelDesign, _check_action

THRESHOLD_RULES = ("oracle", "theory", "plug_in")

# tau_a = multiplier * K * T(a) for the theory rule; the default multiplier is
# the constant under which the gap-selection guarantee is proved.  It is far
# too conservative at panel sizes that fit on a desk, so experiment presets
# override it with calibrated values.
THEORY_MULTIPLIER_DEFAULT = 96.0

# tau_a = gap_multiplier * sigma_{rank_cap+1}(a) for the plug_in rule.
PLUG_IN_MULTIPLIER_DEFAULT = 3.0

_KEEP_SCALED_MAX_ENTRIES = 10_000_000


@dataclass(frozen=True)
class ThresholdRule:
    """How the per-action gap thresholds tau_a are chosen.

    kind "oracle": tau_0/tau_1 given explicitly (tests and calibration).
    kind "theory": tau_a = multiplier * K * T(a) from the true design, where
        K bounds signal plus noise entries and T(a) is the design's noise
        aggregate (diagnostics.design_params); requires the design.
    kind "plug_in": tau_a = gap_multiplier * (last computed singular value),
        a data-driven rule for when the design is unknown.
    """

    kind: str
    tau_0: float | None = None
    tau_1: float | None = None
    multiplier: float = THEORY_MULTIPLIER_DEFAULT
    gap_multiplier: float = PLUG_IN_MULTIPLIER_DEFAULT

    def __post_init__(self):
        if self.kind not in THRESHOLD_RULES:
            raise ConfigError(f"unknown threshold rule {self.kind!r}; expected one of {THRESHOLD_RULES}")
        if self.kind == "oracle":
            if self.tau_0 is None or self.tau_1 is None:
                raise ConfigError("oracle threshold rule requires tau_0 and tau_1")
            if self.tau_0 < 0 or self.tau_1 < 0:
                raise ConfigError("oracle thresholds must be nonnegative")
        if self.kind == "theory" and self.multiplier <= 0:
            raise ConfigError("theory threshold multiplier must be positive")
        if self.kind == "plug_in" and self.gap_multiplier <= 0:
            raise ConfigError("plug_in gap multiplier must be positive")

    @classmethod
    def oracle(cls, tau_0: float, tau_1: float) -> "ThresholdRule":
        return cls(kind="oracle", tau_0=float(tau_0), tau_1=float(tau_1))

    @classmethod
    def theory(cls, multiplier: float = THEORY_MULTIPLIER_DEFAULT) -> "ThresholdRule":
        return cls(kind="theory", multiplier=float(multiplier))

    @classmethod
    def plug_in(cls, gap_multiplier: float = PLUG_IN_MULTIPLIER_DEFAULT) -> "ThresholdRule":
        return cls(kind="plug_in", gap_multiplier=float(gap_multiplier))


@dataclass(frozen=True)
class EstimatorConfig:
    """Estimator knobs.

    signal_bound/noise_bound feed K = signal_bound + noise_bound for the
    theory threshold rule and are otherwise unused.  keep_scaled None keeps
    the scaled matrices on the result only when the panel has at most ten
    million entries.
    """

    rank_cap: int
    threshold: ThresholdRule
    signal_bound: float | None = None
    noise_bound: float | None = None
    sketch_seed: int = 0
    keep_scaled: bool | None = None

    def __post_init__(self):
        if self.rank_cap < 1:
            raise ConfigError(f"rank_cap must be at least 1, got {self.rank_cap}")


@dataclass(frozen=True)
class EstimateResult:
    """Everything the estimator computed, including per-action intermediates."""

    effect: np.ndarray
    outcome_0: np.ndarray
    outcome_1: np.ndarray
    selected_rank_0: int
    selected_rank_1: int
    tau_0: float
    tau_1: float
    singular_values_0: np.ndarray
    singular_values_1: np.ndarray
    gaps_0: np.ndarray
    gaps_1: np.ndarray
    row_propensity_0: np.ndarray | None
    row_propensity_1: np.ndarray | None
    floor_count_0: int
    floor_count_1: int
    scaled_0: np.ndarray | None
    scaled_1: np.ndarray | None

    def outcome_for(self, action: int) -> np.ndarray:
        _check_action(action)
        return self.outcome_1 if action == 1 else self.outcome_0

    def selected_rank(self, action: int) -> int:
        _check_action(action)
        return self.selected_rank_1 if action == 1 else self.selected_rank_0

    def gap_table(self) -> dict:
        """Per-action singular values and gaps, keyed by action label."""
        return {
            "0": {"sigma": self.singular_values_0.copy(), "gap": self.gaps_0.copy()},
            "1": {"sigma": self.singular_values_1.copy(), "gap": self.gaps_1.copy()},
        }


def empirical_row_propensity(assignments, action: int) -> np.ndarray:
    """Per-unit frequency of the action, floored at 1/n_times.

    The floor only matters for rows never assigned the action; division by
    these propensities is then finite and the row contributes a zero slice
    to the scaled matrix anyway.
    """
    d = as_matrix(assignments, "assignments")
    if not np.all((d == 0.0) | (d == 1.0)):
        raise ValidationError("assignments must be 0/1 valued")
    _check_action(action)
    ind = d if action == 1 else 1.0 - d
    m = d.shape[1]
    return np.maximum(ind.mean(axis=1), 1.0 / m)


def row_scaled_matrix(obs: ObservedPanel, action: int) -> np.ndarray:
    """Masked outcomes divided by the floored empirical row propensity."""
    p_hat = empirical_row_propensity(obs.assignments, action)
    return obs.indicator(action) * obs.y_obs / p_hat[:, None]


def select_rank(singular_values, rank_cap: int, tau: float) -> int:
    """Largest s <= rank_cap whose gap sigma_s - sigma_{s+1} is >= tau, else 0.

    Gaps past the end of the input use the trailing-zero convention of
    linalg.singular_gaps.
    """
    if tau < 0:
        raise ValidationError(f"threshold must be nonnegative, got {tau}")
    if rank_cap < 1:
        raise ValidationError(f"rank_cap must be at least 1, got {rank_cap}")
    gaps = singular_gaps(singular_values)
    limit = min(rank_cap, gaps.shape[0])
    selected = 0
    for s in range(1, limit + 1):
        if gaps[s - 1] >= tau:
            selected = s
    return selected


def _truncation(values: np.ndarray, svd, s: int) -> np.ndarray:
    if s == 0:
        return np.zeros((svd.u.shape[0], svd.v.shape[0]))
    return svd.truncate(s).reconstruct()


def _resolve_taus(config: EstimatorConfig, design: PanelDesign | None,
                  last_values: tuple[float, float]) -> tuple[float, float]:
    rule = config.threshold
    if rule.kind == "oracle":
        return float(rule.tau_0), float(rule.tau_1)
    if rule.kind == "plug_in":
        return (rule.gap_multiplier * last_values[0],
                rule.gap_multiplier * last_values[1])
    # theory rule: needs the true design and the entry-bound total K
    if design is None:
        raise ConfigError("theory threshold rule requires the true design")
    if config.signal_bound is None or config.noise_bound is None:
        raise ConfigError("theory threshold rule requires signal_bound and noise_bound")
    k_total = config.signal_bound + config.noise_bound
    if k_total <= 0:
        raise ConfigError("theory threshold rule requires a positive entry-bound total")
    from .diagnostics import design_params

    params = design_params(design)
    return (rule.multiplier * k_total * params.t_0,
            rule.multiplier * k_total * params.t_1)


def estimate(obs: ObservedPanel, config: EstimatorConfig,
             design: PanelDesign | None = None) -> EstimateResult:
    """Run the full per-action pipeline on an observed panel.

    `design` is only consulted by the theory threshold rule.  The two actions
    are processed independently but share the sketch seed, so relabeling the
    actions (flipping assignments) swaps the two outcome estimates exactly.
    """
    n, m = obs.shape
    if config.rank_cap >= min(n, m):
        raise ValidationError(
            f"rank_cap {config.rank_cap} must be below min(n, m) = {min(n, m)}"
        )
    k_components = config.rank_cap + 1

    p_hats, scaled, svds = {}, {}, {}
    for action in (0, 1):
        p_hat = empirical_row_propensity(obs.assignments, action)
        mat = obs.indicator(action) * obs.y_obs / p_hat[:, None]
        p_hats[action] = p_hat
        scaled[action] = mat
        svds[action] = svd_truncated(mat, k_components,
                                     rng=np.random.default_rng(config.sketch_seed))

    tau_0, tau_1 = _resolve_taus(
        config, design, (svds[0].s[-1], svds[1].s[-1]))

    gaps = {a: singular_gaps(svds[a].s) for a in (0, 1)}
    s0 = select_rank(svds[0].s, config.rank_cap, tau_0)
    s1 = select_rank(svds[1].s, config.rank_cap, tau_1)
    a_hat_0 = _truncation(svds[0].s, svds[0], s0)
    a_hat_1 = _truncation(svds[1].s, svds[1], s1)

    keep = config.keep_scaled
    if keep is None:
        keep = n * m <= _KEEP_SCALED_MAX_ENTRIES
    floor = 1.0 / m
    return EstimateResult(
        effect=a_hat_1 - a_hat_0,
        outcome_0=a_hat_0, outcome_1=a_hat_1,
        selected_rank_0=s0, selected_rank_1=s1,
        tau_0=tau_0, tau_1=tau_1,
        singular_values_0=svds[0].s.copy(), singular_values_1=svds[1].s.copy(),
        gaps_0=gaps[0], gaps_1=gaps[1],
        row_propensity_0=p_hats[0], row_propensity_1=p_hats[1],
        floor_count_0=int(np.sum(p_hats[0] <= floor)),
        floor_count_1=int(np.sum(p_hats[1] <= floor)),
        scaled_0=scaled[0] if keep else None,
        scaled_1=scaled[1] if keep else None,
    )


def ipw_oracle_estimate(obs: ObservedPanel, propensity, rank_cap: int,
                        taus: tuple[float, float], sketch_seed: int = 0) -> EstimateResult:
    """Estimator variant that scales by the true per-entry propensities.

    Unlike the row-scaled pipeline this needs the entire propensity matrix,
    so it serves as a reference point: the scaled matrix is entrywise
    unbiased for A(a) without any row-mean approximation.
    """
    p = as_matrix(propensity, "propensity")
    n, m = obs.shape
    if p.shape != (n, m):
        raise ValidationError("propensity shape must match the panel")
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValidationError("propensities must lie strictly inside (0, 1)")
    if rank_cap >= min(n, m):
        raise ValidationError(f"rank_cap {rank_cap} must be below min(n, m) = {min(n, m)}")
    tau_0, tau_1 = float(taus[0]), float(taus[1])
    if tau_0 < 0 or tau_1 < 0:
        raise ValidationError("thresholds must be nonnegative")

    results = {}
    for action, tau in ((0, tau_0), (1, tau_1)):
        pa = p if action == 1 else 1.0 - p
        mat = obs.indicator(action) * obs.y_obs / pa
        svd = svd_truncated(mat, rank_cap + 1, rng=np.random.default_rng(sketch_seed))
        s_sel = select_rank(svd.s, rank_cap, tau)
        results[action] = (mat, svd, s_sel, _truncation(svd.s, svd, s_sel))

    keep = n * m <= _KEEP_SCALED_MAX_ENTRIES
    return EstimateResult(
        effect=results[1][3] - results[0][3],
        outcome_0=results[0][3], outcome_1=results[1][3],
        selected_rank_0=results[0][2], selected_rank_1=results[1][2],
        tau_0=tau_0, tau_1=tau_1,
        singular_values_0=results[0][1].s.copy(),
        singular_values_1=results[1][1].s.copy(),
        gaps_0=singular_gaps(results[0][1].s),
        gaps_1=singular_gaps(results[1][1].s),
        row_propensity_0=None, row_propensity_1=None,
        floor_count_0=0, floor_count_1=0,
        scaled_0=results[0][0] if keep else None,
        scaled_1=results[1][0] if keep else None,
    )
