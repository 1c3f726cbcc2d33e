"""Experiment configuration: a strict, documented YAML schema.

Unknown keys anywhere in the file are errors, so a typo like `p_lo` fails
fast instead of silently running the default.  The full schema is documented
in docs/config-schema.md; `parse_config` is the single entry point and
`config_to_mapping` inverts it for preset emission and round-trips.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import yaml

from .errors import ConfigError
from .estimator import EstimatorConfig, ThresholdRule
from .model import DESIGN_FAMILIES, NOISE_LAWS, SPECTRUM_SHAPES

DEFAULT_SUBSET_NAMES = ("all", "first-half", "even-indices")

WIDE_PANEL_MESSAGE = (
    "this estimator targets wide panels observed over at least as many time "
    "points as units (m >= n); got n={n}, m={m}"
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a sweep needs: sizes, generators, estimator, bookkeeping."""

    name: str
    seed: int
    replications: int
    sizes: tuple[tuple[int, int], ...]
    design_family: str
    design_params: dict
    rank: int
    entry_bound: float
    spectrum: str
    snr_floor_multiplier: float
    noise_law: str
    noise_bound: float
    estimator: EstimatorConfig
    record_bounds: bool = False
    record_timings: bool = False
    subsets: tuple[str, ...] = DEFAULT_SUBSET_NAMES
    subset_seed: int = 0
    output: str | None = None

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError(f"replications must be >= 1, got {self.replications}")
        if not self.sizes:
            raise ConfigError("at least one panel size is required")
        prev_n = 0
        for n, m in self.sizes:
            if n <= prev_n:
                raise ConfigError(
                    f"n values must be strictly increasing, got {[s[0] for s in self.sizes]}")
            if m < n:
                raise ConfigError(WIDE_PANEL_MESSAGE.format(n=n, m=m))
            prev_n = n
        if self.rank < 1:
            raise ConfigError(f"rank must be >= 1, got {self.rank}")
        if self.entry_bound <= 0:
            raise ConfigError(f"signal entry_bound must be positive, got {self.entry_bound}")
        if self.noise_bound < 0:
            raise ConfigError(f"noise entry_bound must be nonnegative, got {self.noise_bound}")
        if self.spectrum not in SPECTRUM_SHAPES:
            raise ConfigError(f"unknown spectrum {self.spectrum!r}; expected one of {SPECTRUM_SHAPES}")
        if self.noise_law not in NOISE_LAWS:
            raise ConfigError(f"unknown noise law {self.noise_law!r}; expected one of {NOISE_LAWS}")
        if self.design_family not in DESIGN_FAMILIES:
            raise ConfigError(
                f"unknown design family {self.design_family!r}; expected one of {DESIGN_FAMILIES}")
        if self.snr_floor_multiplier < 0:
            raise ConfigError(
                f"snr_floor_multiplier must be nonnegative, got {self.snr_floor_multiplier}")


def _require_mapping(node, path: str) -> dict:
    if not isinstance(node, dict):
        raise ConfigError(f"{path or 'top level'} must be a mapping, got {type(node).__name__}")
    return node


def _take(node: dict, path: str, key: str, required: bool = False, default=None):
    if key in node:
        return node.pop(key)
    if required:
        raise ConfigError(f"missing required key {_join(path, key)!r}")
    return default


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _reject_unknown(node: dict, path: str) -> None:
    if node:
        keys = ", ".join(repr(_join(path, k)) for k in sorted(node))
        raise ConfigError(f"unknown config key(s): {keys}")


def _as_int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path!r} must be an integer, got {value!r}")
    return value


def _as_number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path!r} must be a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{path!r} must be finite, got {value!r}")
    return value


def _as_bool(value, path: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{path!r} must be true or false, got {value!r}")
    return value


def _as_str(value, path: str) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"{path!r} must be a string, got {value!r}")
    return value


def _parse_sizes(node, path: str) -> tuple[tuple[int, int], ...]:
    node = dict(_require_mapping(node, path))
    n_list = _take(node, path, "n", required=True)
    aspect = _take(node, path, "aspect_ratio")
    m_list = _take(node, path, "m")
    _reject_unknown(node, path)
    if not isinstance(n_list, list) or not n_list:
        raise ConfigError(f"{_join(path, 'n')!r} must be a nonempty list of integers")
    ns = [_as_int(v, _join(path, "n")) for v in n_list]
    if (aspect is None) == (m_list is None):
        raise ConfigError(
            f"{path!r} needs exactly one of 'aspect_ratio' or an explicit 'm' list")
    if aspect is not None:
        ratio = _as_number(aspect, _join(path, "aspect_ratio"))
        if ratio < 1.0:
            raise ConfigError(
                f"aspect_ratio must be >= 1 (wide panels, m >= n), got {ratio}")
        ms = [int(round(ratio * n)) for n in ns]
    else:
        if not isinstance(m_list, list) or len(m_list) != len(ns):
            raise ConfigError(f"{_join(path, 'm')!r} must be a list matching 'n' in length")
        ms = [_as_int(v, _join(path, "m")) for v in m_list]
    return tuple(zip(ns, ms))


_DESIGN_KEYS = {
    "constant": ("p",),
    "row_homogeneous": ("p_low", "p_high"),
    "nonuniform": ("p_low", "p_high", "nu"),
}


def _parse_design(node, path: str) -> tuple[str, dict]:
    node = dict(_require_mapping(node, path))
    family = _as_str(_take(node, path, "family", required=True), _join(path, "family"))
    if family not in _DESIGN_KEYS:
        raise ConfigError(
            f"unknown design family {family!r}; expected one of {tuple(_DESIGN_KEYS)}")
    params = {}
    for key in _DESIGN_KEYS[family]:
        params[key] = _as_number(_take(node, path, key, required=True), _join(path, key))
    eps = _take(node, path, "epsilon")
    if eps is not None:
        params["epsilon"] = _as_number(eps, _join(path, "epsilon"))
    _reject_unknown(node, path)
    return family, params


def _parse_threshold(node, path: str) -> ThresholdRule:
    node = dict(_require_mapping(node, path))
    kind = _as_str(_take(node, path, "kind", required=True), _join(path, "kind"))
    if kind == "oracle":
        tau_0 = _as_number(_take(node, path, "tau_0", required=True), _join(path, "tau_0"))
        tau_1 = _as_number(_take(node, path, "tau_1", required=True), _join(path, "tau_1"))
        _reject_unknown(node, path)
        return ThresholdRule.oracle(tau_0, tau_1)
    if kind == "theory":
        mult = _take(node, path, "multiplier")
        _reject_unknown(node, path)
        if mult is None:
            return ThresholdRule.theory()
        return ThresholdRule.theory(_as_number(mult, _join(path, "multiplier")))
    if kind == "plug_in":
        mult = _take(node, path, "gap_multiplier")
        _reject_unknown(node, path)
        if mult is None:
            return ThresholdRule.plug_in()
        return ThresholdRule.plug_in(_as_number(mult, _join(path, "gap_multiplier")))
    raise ConfigError(
        f"unknown threshold kind {kind!r}; expected 'oracle', 'theory', or 'plug_in'")


def parse_config(mapping, source: str = "<config>") -> ExperimentConfig:
    """Turn a parsed YAML mapping into an ExperimentConfig, strictly."""
    top = dict(_require_mapping(mapping, ""))
    name = _as_str(_take(top, "", "name", default="experiment"), "name")
    seed = _as_int(_take(top, "", "seed", required=True), "seed")
    replications = _as_int(_take(top, "", "replications", required=True), "replications")
    output = _take(top, "", "output")
    if output is not None:
        output = _as_str(output, "output")
    sizes = _parse_sizes(_take(top, "", "sizes", required=True), "sizes")
    family, design_params = _parse_design(_take(top, "", "design", required=True), "design")

    sig = dict(_require_mapping(_take(top, "", "signal", required=True), "signal"))
    rank = _as_int(_take(sig, "signal", "rank", required=True), "signal.rank")
    entry_bound = _as_number(_take(sig, "signal", "entry_bound", default=1.0),
                             "signal.entry_bound")
    spectrum = _as_str(_take(sig, "signal", "spectrum", default="flat_with_gap"),
                       "signal.spectrum")
    snr_mult = _as_number(_take(sig, "signal", "snr_floor_multiplier", default=0.0),
                          "signal.snr_floor_multiplier")
    _reject_unknown(sig, "signal")

    noi = dict(_require_mapping(_take(top, "", "noise", required=True), "noise"))
    noise_law = _as_str(_take(noi, "noise", "law", default="uniform_symmetric"), "noise.law")
    noise_bound = _as_number(_take(noi, "noise", "entry_bound", default=1.0),
                             "noise.entry_bound")
    _reject_unknown(noi, "noise")

    est = dict(_require_mapping(_take(top, "", "estimator", required=True), "estimator"))
    rank_cap = _as_int(_take(est, "estimator", "rank_cap", required=True),
                       "estimator.rank_cap")
    threshold = _parse_threshold(
        _take(est, "estimator", "threshold", default={"kind": "theory"}),
        "estimator.threshold")
    keep_scaled = _take(est, "estimator", "keep_scaled")
    if keep_scaled is not None:
        keep_scaled = _as_bool(keep_scaled, "estimator.keep_scaled")
    _reject_unknown(est, "estimator")

    rec = dict(_require_mapping(_take(top, "", "record", default={}), "record"))
    record_bounds = _as_bool(_take(rec, "record", "bounds", default=False), "record.bounds")
    record_timings = _as_bool(_take(rec, "record", "timings", default=False),
                              "record.timings")
    subsets_node = _take(rec, "record", "subsets", default=list(DEFAULT_SUBSET_NAMES))
    subset_seed = _as_int(_take(rec, "record", "subset_seed", default=0),
                          "record.subset_seed")
    _reject_unknown(rec, "record")
    if not isinstance(subsets_node, list) or not subsets_node:
        raise ConfigError("'record.subsets' must be a nonempty list of preset names")
    subsets = tuple(_as_str(s, "record.subsets[]") for s in subsets_node)

    _reject_unknown(top, "")

    estimator = EstimatorConfig(
        rank_cap=rank_cap,
        threshold=threshold,
        signal_bound=entry_bound,
        noise_bound=noise_bound,
        keep_scaled=keep_scaled,
    )
    try:
        return ExperimentConfig(
            name=name, seed=seed, replications=replications, sizes=sizes,
            design_family=family, design_params=design_params, rank=rank,
            entry_bound=entry_bound, spectrum=spectrum,
            snr_floor_multiplier=snr_mult, noise_law=noise_law,
            noise_bound=noise_bound, estimator=estimator,
            record_bounds=record_bounds, record_timings=record_timings,
            subsets=subsets, subset_seed=subset_seed, output=output,
        )
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            mapping = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    if mapping is None:
        raise ConfigError(f"{path}: empty config file")
    return parse_config(mapping, source=str(path))


def _threshold_to_mapping(rule: ThresholdRule) -> dict:
    if rule.kind == "oracle":
        return {"kind": "oracle", "tau_0": rule.tau_0, "tau_1": rule.tau_1}
    if rule.kind == "theory":
        return {"kind": "theory", "multiplier": rule.multiplier}
    return {"kind": "plug_in", "gap_multiplier": rule.gap_multiplier}


def config_to_mapping(config: ExperimentConfig) -> dict:
    """Inverse of parse_config (parse(config_to_mapping(c)) == c)."""
    out = {
        "name": config.name,
        "seed": config.seed,
        "replications": config.replications,
        "sizes": {
            "n": [int(n) for n, _ in config.sizes],
            "m": [int(m) for _, m in config.sizes],
        },
        "design": {"family": config.design_family, **config.design_params},
        "signal": {
            "rank": config.rank,
            "entry_bound": config.entry_bound,
            "spectrum": config.spectrum,
            "snr_floor_multiplier": config.snr_floor_multiplier,
        },
        "noise": {"law": config.noise_law, "entry_bound": config.noise_bound},
        "estimator": {
            "rank_cap": config.estimator.rank_cap,
            "threshold": _threshold_to_mapping(config.estimator.threshold),
        },
        "record": {
            "bounds": config.record_bounds,
            "timings": config.record_timings,
            "subsets": list(config.subsets),
            "subset_seed": config.subset_seed,
        },
    }
    if config.estimator.keep_scaled is not None:
        out["estimator"]["keep_scaled"] = config.estimator.keep_scaled
    if config.output is not None:
        out["output"] = config.output
    return out


def save_config(config: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_mapping(config), fh, sort_keys=False)
