"""Design diagnostics, error reports, and theoretical bound evaluators.

The bound evaluators follow the proved envelopes with every hidden leading
constant set to 1 (except where a constant is explicit in the statement, as
in the residual operator bound).  They are not quantitative at desk scale:
experiment code compares measured errors against constant * bound with the
constant fitted once per experiment family, then held fixed.  Logarithms are
natural throughout.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ValidationError
from .linalg import as_matrix, norm, svd_truncated
from .model import (ObservedPanel, PanelDesign, PanelInstance, _check_action,
                    relative_propensity_deviation, row_means_exact)

# A subset average error never exceeds sqrt(1/|S|) * two_infty norm of the
# effect error; error_report checks both sides of that bridge.
DEFAULT_SUBSETS = ("all", "first-half", "even-indices")


@dataclass(frozen=True)
class DesignParams:
    """Overlap and nonuniformity amounts of an assignment design.

    q    -- worst-case row-mean propensity over both actions;
    r_p  -- largest ratio of a per-entry propensity to its row mean;
    p_bar_0/p_bar_1 -- per-unit row-mean propensities;
    p_matrix_0/p_matrix_1 -- relative deviation matrices P(a) = p(a)/p_bar - 1
                             (each row averages to zero by construction);
    p_op_0/p_op_1 -- operator norms of the deviation matrices;
    t_0/t_1 -- per-action noise aggregates
               T(a) = sqrt((m + r_p n) / q * log(n + m)) + ||P(a)||_op.
    """

    n: int
    m: int
    q: float
    r_p: float
    p_bar_0: np.ndarray
    p_bar_1: np.ndarray
    p_matrix_0: np.ndarray
    p_matrix_1: np.ndarray
    p_op_0: float
    p_op_1: float
    t_0: float
    t_1: float

    def t_for(self, action: int) -> float:
        _check_action(action)
        return self.t_1 if action == 1 else self.t_0

    def p_op_for(self, action: int) -> float:
        _check_action(action)
        return self.p_op_1 if action == 1 else self.p_op_0

    def p_bar_for(self, action: int) -> np.ndarray:
        _check_action(action)
        return self.p_bar_1 if action == 1 else self.p_bar_0

    def p_matrix_for(self, action: int) -> np.ndarray:
        _check_action(action)
        return self.p_matrix_1 if action == 1 else self.p_matrix_0

    def flatten(self) -> dict:
        return {
            "q": self.q, "r_p": self.r_p,
            "p_op_0": self.p_op_0, "p_op_1": self.p_op_1,
            "t_0": self.t_0, "t_1": self.t_1,
        }


def design_params(design: PanelDesign) -> DesignParams:
    """Compute q, r_p, P(a) matrices and operator norms, and T(a)."""
    n, m = design.propensity.shape
    q = math.inf
    r_p = 0.0
    p_bars, devs, p_ops = {}, {}, {}
    for action in (0, 1):
        pa = design.propensity_for(action)
        pbar = row_means_exact(pa)
        q = min(q, float(pbar.min()))
        r_p = max(r_p, float((pa / pbar[:, None]).max()))
        dev = pa / pbar[:, None] - 1.0
        p_bars[action] = pbar
        devs[action] = dev
        if np.all(dev == 0.0):
            p_ops[action] = 0.0  # row-homogeneous: exactly zero, skip the solver
        else:
            p_ops[action] = float(
                svd_truncated(dev, 1, rng=np.random.default_rng(0)).s[0])
    log_nm = math.log(n + m)
    t = {a: math.sqrt((m + r_p * n) / q * log_nm) + p_ops[a] for a in (0, 1)}
    return DesignParams(n=n, m=m, q=q, r_p=r_p,
                        p_bar_0=p_bars[0], p_bar_1=p_bars[1],
                        p_matrix_0=devs[0], p_matrix_1=devs[1],
                        p_op_0=p_ops[0], p_op_1=p_ops[1],
                        t_0=t[0], t_1=t[1])


class Incoherence(NamedTuple):
    mu_row: float
    mu_col: float
    mu: float


def incoherence(a, r: int) -> Incoherence:
    """Row/column incoherence of the leading rank-r subspaces.

    mu_row = sqrt(n) * max_i ||e_i' U||, mu_col = sqrt(m) * max_j ||e_j' V||,
    mu = max of the two.  If the numerical rank is below r the measurement
    uses the available components and a warning is issued.
    """
    a = as_matrix(a)
    n, m = a.shape
    if not 1 <= r <= min(n, m):
        raise ValidationError(f"rank must be in [1, {min(n, m)}], got {r}")
    svd = svd_truncated(a, r, rng=np.random.default_rng(0))
    cutoff = 1e-12 * max(svd.s[0], 1e-300)
    r_eff = int(np.sum(svd.s > cutoff))
    if r_eff < r:
        warnings.warn(
            f"requested rank {r} exceeds numerical rank {r_eff}; incoherence "
            f"measured on {r_eff} components", stacklevel=2)
    if r_eff == 0:
        return Incoherence(0.0, 0.0, 0.0)
    mu_row = math.sqrt(n) * norm(svd.u[:, :r_eff], "two_infty")
    mu_col = math.sqrt(m) * norm(svd.v[:, :r_eff], "two_infty")
    return Incoherence(mu_row, mu_col, max(mu_row, mu_col))


# ---------------------------------------------------------------------------
# error reports


@dataclass(frozen=True)
class NormSummary:
    two_infty_raw: float
    two_infty_normalized: float
    frobenius_normalized: float
    operator: float
    entry_max: float
    row_errors: np.ndarray

    def flatten(self, prefix: str) -> dict:
        return {
            f"{prefix}_two_infty_raw": self.two_infty_raw,
            f"{prefix}_two_infty_norm": self.two_infty_normalized,
            f"{prefix}_frobenius_norm": self.frobenius_normalized,
            f"{prefix}_operator": self.operator,
            f"{prefix}_entry_max": self.entry_max,
        }


@dataclass(frozen=True)
class ErrorReport:
    """Norms of estimation errors plus per-unit subset-average errors."""

    effect: NormSummary
    outcome_0: NormSummary
    outcome_1: NormSummary
    avg_errors: dict

    def flatten(self) -> dict:
        out = {}
        out.update(self.effect.flatten("err_effect"))
        out.update(self.outcome_0.flatten("err_outcome_0"))
        out.update(self.outcome_1.flatten("err_outcome_1"))
        for name, per_unit in self.avg_errors.items():
            out[f"avg_err_{name}_max"] = float(np.max(per_unit))
        return out


def column_subsets(m: int, names=DEFAULT_SUBSETS, seed: int = 0) -> dict:
    """Named column index sets: all, first-half, even-indices, random-half."""
    out = {}
    for name in names:
        if name == "all":
            idx = np.arange(m)
        elif name == "first-half":
            idx = np.arange((m + 1) // 2)
        elif name == "even-indices":
            idx = np.arange(0, m, 2)
        elif name == "random-half":
            rng = np.random.default_rng(seed)
            idx = np.sort(rng.permutation(m)[: (m + 1) // 2])
        else:
            raise ValidationError(f"unknown subset preset {name!r}")
        out[name] = idx
    return out


def _summarize(diff: np.ndarray) -> NormSummary:
    n, m = diff.shape
    row = np.sqrt(np.sum(diff * diff, axis=1))
    two_infty = float(row.max())
    fro = float(np.sqrt(np.sum(diff * diff)))
    return NormSummary(
        two_infty_raw=two_infty,
        two_infty_normalized=two_infty / math.sqrt(m),
        frobenius_normalized=fro / math.sqrt(n * m),
        operator=norm(diff, "operator"),
        entry_max=float(np.abs(diff).max()),
        row_errors=row,
    )


def error_report(effect_hat, effect_true, outcome_hats, outcome_trues,
                 subsets: dict | None = None) -> ErrorReport:
    """Error norms for the effect and per-action outcome estimates.

    outcome_hats/outcome_trues are (action0, action1) pairs.  subsets maps
    names to column index arrays; None uses the default presets.  For each
    subset the report records per-unit absolute errors of the column-averaged
    effect, |avg_j-in-S (M_hat - M)_ij|.
    """
    m_hat = as_matrix(effect_hat, "effect_hat")
    m_true = as_matrix(effect_true, "effect_true")
    if m_hat.shape != m_true.shape:
        raise ValidationError("effect matrices must share a shape")
    pairs = []
    for idx in (0, 1):
        h = as_matrix(outcome_hats[idx], f"outcome_hat_{idx}")
        t = as_matrix(outcome_trues[idx], f"outcome_true_{idx}")
        if h.shape != m_hat.shape or t.shape != m_hat.shape:
            raise ValidationError("outcome matrices must match the effect shape")
        pairs.append((h, t))
    n, m = m_hat.shape
    if subsets is None:
        subsets = column_subsets(m)
    diff = m_hat - m_true
    avg_errors = {}
    for name, idx in subsets.items():
        idx = np.asarray(idx, dtype=int)
        if idx.size == 0:
            raise ValidationError(f"subset {name!r} is empty")
        if idx.min() < 0 or idx.max() >= m:
            raise ValidationError(f"subset {name!r} has out-of-range column indices")
        avg_errors[name] = np.abs(diff[:, idx].mean(axis=1))
    return ErrorReport(
        effect=_summarize(diff),
        outcome_0=_summarize(pairs[0][0] - pairs[0][1]),
        outcome_1=_summarize(pairs[1][0] - pairs[1][1]),
        avg_errors=avg_errors,
    )


# ---------------------------------------------------------------------------
# bound evaluators (unit leading constants, natural logs)


def _check_positive(**kwargs) -> None:
    for name, value in kwargs.items():
        if value <= 0:
            raise ValidationError(f"{name} must be positive, got {value}")


def _check_nonnegative(**kwargs) -> None:
    for name, value in kwargs.items():
        if value < 0:
            raise ValidationError(f"{name} must be nonnegative, got {value}")


def recovery_error_bound(k: float, r: int, mu: float, r_p: float, q: float,
                         p_op_norm: float, n: int, m: int) -> float:
    """Row-wise recovery envelope for the full pipeline.

    K r^{3/2} mu sqrt(n+m) log^4(n+m) [ sqrt(r_p/(mq) + r_p/(nq))
                                        + ||P(a)||_op / sqrt(nm) ].
    """
    _check_positive(r=r, mu=mu, r_p=r_p, q=q, n=n, m=m)
    _check_nonnegative(k=k, p_op_norm=p_op_norm)
    log4 = math.log(n + m) ** 4
    inner = math.sqrt(r_p / (m * q) + r_p / (n * q)) + p_op_norm / math.sqrt(n * m)
    return k * r ** 1.5 * mu * math.sqrt(n + m) * log4 * inner


def residual_operator_bound(k: float, r_p: float, q: float, n: int, m: int) -> float:
    """High-probability operator-norm envelope for the random residual:
    12 K sqrt(log(n+m)) sqrt(r_p (n+m) / q)."""
    _check_positive(r_p=r_p, q=q, n=n, m=m)
    _check_nonnegative(k=k)
    return 12.0 * k * math.sqrt(math.log(n + m)) * math.sqrt(r_p * (n + m) / q)


def truncation_perturbation_bound(r: int, k: float, sigma: float, e0_op: float,
                                  sigma_s: float, delta_s: float, mu: float,
                                  n: int, m: int) -> float:
    """Row-wise envelope for ||A_tilde_s - A_s||_{2,inf} under a spectral gap.

    sqrt(r) [log^2(n+m) + K log^4(n+m)/sqrt(n+m)] (mu/sqrt(m) + mu/sqrt(n))
            * sqrt(n+m) sigma_s (sigma + ||E_0||_op) / delta_s.
    """
    _check_positive(r=r, mu=mu, n=n, m=m, delta_s=delta_s)
    _check_nonnegative(k=k, sigma=sigma, e0_op=e0_op, sigma_s=sigma_s)
    log_nm = math.log(n + m)
    poly = log_nm ** 2 + k * log_nm ** 4 / math.sqrt(n + m)
    rows = mu / math.sqrt(m) + mu / math.sqrt(n)
    return math.sqrt(r) * poly * rows * math.sqrt(n + m) * sigma_s * (sigma + e0_op) / delta_s


def truncation_perturbation_bound_refined(r: int, k: float, sigma: float, x0: float,
                                          e0_op: float, sigma_s: float, delta_s: float,
                                          mu: float, n: int, m: int) -> float:
    """Refinement splitting the deterministic term into a projected part x0 =
    max_ij |u_i' E_0 v_j| and an operator-norm tail:

    sqrt(r) [log^2 + K log^4/sqrt(n+m)] sqrt(n+m) (sigma_s/delta_s)
            * [ mu (1/sqrt(m) + 1/sqrt(n)) (x0 + sigma) + ||E_0||_op/sqrt(n+m) ].
    """
    _check_positive(r=r, mu=mu, n=n, m=m, delta_s=delta_s)
    _check_nonnegative(k=k, sigma=sigma, x0=x0, e0_op=e0_op, sigma_s=sigma_s)
    log_nm = math.log(n + m)
    poly = log_nm ** 2 + k * log_nm ** 4 / math.sqrt(n + m)
    bracket = mu * (1.0 / math.sqrt(m) + 1.0 / math.sqrt(n)) * (x0 + sigma) \
        + e0_op / math.sqrt(n + m)
    return math.sqrt(r) * poly * math.sqrt(n + m) * (sigma_s / delta_s) * bracket


def gap_condition_holds(delta_s: float, residual_op: float, bias_op: float) -> bool:
    """The spectral-gap condition behind the truncation bound:
    delta_s >= 6 (||E_R||_op + ||E_0||_op)."""
    _check_nonnegative(residual_op=residual_op, bias_op=bias_op)
    if delta_s <= 0:
        raise ValidationError(f"delta_s must be positive, got {delta_s}")
    return delta_s >= 6.0 * (residual_op + bias_op)


def propensity_discrepancy(obs: ObservedPanel, design: PanelDesign,
                           action: int) -> float:
    """max_i |p_hat_i(a) - p_bar_i(a)|: empirical vs population row propensity.

    Population-scaled decompositions use p_bar while the estimator uses p_hat;
    this gap is the sole difference between the two scalings.
    """
    from .estimator import empirical_row_propensity

    _check_action(action)
    if obs.shape != design.propensity.shape:
        raise ValidationError("observed panel and design shapes disagree")
    p_hat = empirical_row_propensity(obs.assignments, action)
    p_bar = row_means_exact(design.propensity_for(action))
    return float(np.abs(p_hat - p_bar).max())


def residual_decomposition(obs: ObservedPanel, instance: PanelInstance,
                           action: int) -> tuple[np.ndarray, np.ndarray]:
    """Split the population-scaled observation into bias and residual parts.

    With pbar the true row-mean propensities, the scaled observation
    D(a) * Y / pbar decomposes as  A(a) + bias + residual  exactly, where

      bias     = (p_ij(a)/pbar_i(a) - 1) * A_ij(a)     (deterministic),
      residual = everything else                        (mean zero).

    Row-homogeneous designs have bias identically zero.
    """
    _check_action(action)
    if obs.shape != instance.design.propensity.shape:
        raise ValidationError("observed panel and instance shapes disagree")
    a = instance.signal.for_action(action)
    pa = instance.design.propensity_for(action)
    pbar = row_means_exact(pa)
    bias = (pa / pbar[:, None] - 1.0) * a
    scaled = obs.indicator(action) * obs.y_obs / pbar[:, None]
    residual = scaled - a - bias
    return bias, residual
