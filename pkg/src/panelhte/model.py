"""Synthetic panel instances: designs, signals, noise, and assignment draws.

Conventions used throughout:
  * the panel is n units (rows) by m time points (columns);
  * `propensity[i, j]` is the probability that unit i receives action 1 at
    time j, so action 0 has per-entry probability 1 - propensity;
  * potential outcome matrices are exact rank-r with entries bounded by the
    signal entry bound; noise matrices are mean zero with entries bounded by
    the noise entry bound.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InfeasibleSignalError, ValidationError
from .linalg import as_matrix, norm

SPECTRUM_SHAPES = ("flat_with_gap", "linear_decay", "geometric_decay")
NOISE_LAWS = ("uniform_symmetric", "rademacher_scaled")
DESIGN_FAMILIES = ("constant", "row_homogeneous", "nonuniform")

GEOMETRIC_DECAY_RATIO = 0.7

# Realized nonuniformity must land within this relative window of the request.
NU_TOLERANCE = 0.2

# Generated designs keep every propensity inside [margin, 1 - margin] unless
# the caller passes an explicit epsilon.
DEFAULT_PROPENSITY_MARGIN = 0.05

_BINARY_MAGIC = b"PHTEMAT1"


def _as_rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def row_means_exact(p: np.ndarray) -> np.ndarray:
    """Row means, exact (no summation rounding) for rows that are constant."""
    means = p.mean(axis=1)
    const = p.max(axis=1) == p.min(axis=1)
    if np.any(const):
        means = means.copy()
        means[const] = p[const, 0]
    return means


@dataclass(frozen=True)
class PanelDesign:
    """Assignment design: per-entry action-1 probabilities plus provenance."""

    propensity: np.ndarray
    family: str
    params: dict = field(default_factory=dict)
    nu_target: float | None = None
    nu_realized: tuple[float, float] | None = None
    clip_count: int = 0

    def __post_init__(self):
        p = as_matrix(self.propensity, "propensity")
        if self.family not in DESIGN_FAMILIES:
            raise ValidationError(f"unknown design family {self.family!r}")
        if np.any(p <= 0.0) or np.any(p >= 1.0):
            raise ValidationError("propensities must lie strictly inside (0, 1)")
        if self.family == "constant" and (p.max() != p.min()):
            raise ValidationError("constant design must have identical propensities")
        if self.family == "row_homogeneous":
            if np.any(p.max(axis=1) != p.min(axis=1)):
                raise ValidationError("row_homogeneous design must be constant within rows")
        object.__setattr__(self, "propensity", p)

    @property
    def n_units(self) -> int:
        return self.propensity.shape[0]

    @property
    def n_times(self) -> int:
        return self.propensity.shape[1]

    def propensity_for(self, action: int) -> np.ndarray:
        _check_action(action)
        return self.propensity if action == 1 else 1.0 - self.propensity


def _check_action(action: int) -> None:
    if action not in (0, 1):
        raise ValidationError(f"action must be 0 or 1, got {action!r}")


def relative_propensity_deviation(design: PanelDesign, action: int) -> np.ndarray:
    """The matrix P(a) with entries p_ij(a) / pbar_i(a) - 1 (rows average to 0)."""
    pa = design.propensity_for(action)
    pbar = row_means_exact(pa)
    return pa / pbar[:, None] - 1.0


@dataclass(frozen=True)
class SignalPair:
    """Exact rank-r potential outcome matrices for the two actions."""

    a0: np.ndarray
    a1: np.ndarray
    rank: int
    entry_bound: float
    singular_values_0: np.ndarray
    singular_values_1: np.ndarray

    def for_action(self, action: int) -> np.ndarray:
        _check_action(action)
        return self.a1 if action == 1 else self.a0

    def singular_values_for(self, action: int) -> np.ndarray:
        _check_action(action)
        return self.singular_values_1 if action == 1 else self.singular_values_0

    def effect(self) -> np.ndarray:
        return self.a1 - self.a0


@dataclass(frozen=True)
class NoisePair:
    e0: np.ndarray
    e1: np.ndarray
    entry_bound: float
    law: str

    def for_action(self, action: int) -> np.ndarray:
        _check_action(action)
        return self.e1 if action == 1 else self.e0


@dataclass(frozen=True)
class PanelInstance:
    """A fully realized synthetic panel (all counterfactuals visible)."""

    design: PanelDesign
    signal: SignalPair
    noise: NoisePair
    assignments: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    seed: int

    def outcome_for(self, action: int) -> np.ndarray:
        _check_action(action)
        return self.y1 if action == 1 else self.y0


@dataclass(frozen=True)
class ObservedPanel:
    """What the analyst sees: one outcome per cell plus the assignment map."""

    y_obs: np.ndarray
    assignments: np.ndarray

    def __post_init__(self):
        y = as_matrix(self.y_obs, "y_obs")
        d = as_matrix(self.assignments, "assignments")
        if y.shape != d.shape:
            raise ValidationError("y_obs and assignments must have matching shapes")
        if not np.all((d == 0.0) | (d == 1.0)):
            raise ValidationError("assignments must be 0/1 valued")
        object.__setattr__(self, "y_obs", y)
        object.__setattr__(self, "assignments", d)

    @property
    def shape(self) -> tuple[int, int]:
        return self.y_obs.shape

    def indicator(self, action: int) -> np.ndarray:
        _check_action(action)
        return self.assignments if action == 1 else 1.0 - self.assignments


def observe(instance: PanelInstance) -> ObservedPanel:
    """Mask the instance: y_obs picks y1 where assigned, else y0, exactly."""
    y_obs = np.where(instance.assignments > 0.5, instance.y1, instance.y0)
    return ObservedPanel(y_obs=y_obs, assignments=instance.assignments)


def _spectrum_shape(spectrum: str, r: int) -> np.ndarray:
    if spectrum == "flat_with_gap":
        return np.ones(r)
    if spectrum == "linear_decay":
        return 1.0 - np.arange(r) / (2.0 * r)
    if spectrum == "geometric_decay":
        return GEOMETRIC_DECAY_RATIO ** np.arange(r)
    raise ValidationError(f"unknown spectrum shape {spectrum!r}; expected one of {SPECTRUM_SHAPES}")


def _one_signal(n: int, m: int, shape: np.ndarray, entry_bound: float,
                rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    u, _ = np.linalg.qr(rng.standard_normal((n, shape.shape[0])))
    v, _ = np.linalg.qr(rng.standard_normal((m, shape.shape[0])))
    b = (u * shape) @ v.T
    # scale to exhaust the entry budget (largest signal consistent with the
    # bound); the tiny shave keeps the post-rounding max strictly inside it
    scale = entry_bound * (1.0 - 1e-12) / float(np.max(np.abs(b)))
    return b * scale, shape * scale


def generate_signal(n: int, m: int, r: int, entry_bound: float, spectrum: str,
                    seed_or_rng, snr_floor: float = 0.0) -> SignalPair:
    """Draw a pair of exact rank-r signal matrices with bounded entries.

    Factors are orthonormalized Gaussian columns, so incoherence is
    O(sqrt(log)) with high probability but is never assumed: callers measure
    it.  Singular values follow the named spectrum shape and are globally
    rescaled so the largest absolute entry sits just inside `entry_bound` --
    the strongest signal the bound allows.  If that leading singular value
    still falls below `snr_floor`, the request is infeasible and an
    InfeasibleSignalError explains which constraints collided.
    """
    if n < 1 or m < 1:
        raise ValidationError(f"matrix shape ({n}, {m}) must be positive")
    if not 1 <= r <= min(n, m):
        raise ValidationError(f"rank must be in [1, {min(n, m)}], got {r}")
    if entry_bound <= 0:
        raise ValidationError(f"signal entry bound must be positive, got {entry_bound}")
    if snr_floor < 0:
        raise ValidationError(f"snr floor must be nonnegative, got {snr_floor}")
    rng = _as_rng(seed_or_rng)
    shape = _spectrum_shape(spectrum, r)
    a0, sv0 = _one_signal(n, m, shape, entry_bound, rng)
    a1, sv1 = _one_signal(n, m, shape, entry_bound, rng)
    weakest = min(sv0[0], sv1[0])
    if weakest < snr_floor:
        raise InfeasibleSignalError(
            f"entry bound {entry_bound} caps the leading singular value at "
            f"{weakest:.6g} for shape ({n}, {m}), below the requested SNR floor "
            f"{snr_floor:.6g}; lower the floor multiplier, raise the entry bound, "
            f"or increase the panel size"
        )
    return SignalPair(a0=a0, a1=a1, rank=r, entry_bound=entry_bound,
                      singular_values_0=sv0, singular_values_1=sv1)


def generate_noise(n: int, m: int, entry_bound: float, law: str, seed_or_rng) -> NoisePair:
    """Mean-zero bounded noise pair; entry_bound 0 yields exact zeros."""
    if n < 1 or m < 1:
        raise ValidationError(f"matrix shape ({n}, {m}) must be positive")
    if entry_bound < 0:
        raise ValidationError(f"noise entry bound must be nonnegative, got {entry_bound}")
    if law not in NOISE_LAWS:
        raise ValidationError(f"unknown noise law {law!r}; expected one of {NOISE_LAWS}")
    rng = _as_rng(seed_or_rng)

    def draw():
        if entry_bound == 0.0:
            return np.zeros((n, m))
        if law == "uniform_symmetric":
            return rng.uniform(-entry_bound, entry_bound, size=(n, m))
        return entry_bound * (2.0 * rng.integers(0, 2, size=(n, m)) - 1.0)

    return NoisePair(e0=draw(), e1=draw(), entry_bound=entry_bound, law=law)


def _nonuniform_propensity(base: np.ndarray, nu: float, eps: float,
                           rng: np.random.Generator, m: int):
    """Multiplicative uniform perturbation scaled until realized nu matches."""
    n = base.shape[0]
    delta = rng.uniform(-1.0, 1.0, size=(n, m))

    def realize(width: float):
        p = np.clip(base[:, None] * (1.0 + width * delta), eps, 1.0 - eps)
        clipped = int(np.sum(p != base[:, None] * (1.0 + width * delta)))
        design = PanelDesign(propensity=p, family="nonuniform",
                             params={"nu": nu, "epsilon": eps})
        scale = np.sqrt(n) + np.sqrt(m)
        ratios = tuple(
            norm(relative_propensity_deviation(design, a), "operator") / scale
            for a in (0, 1)
        )
        return p, clipped, ratios

    lo, hi = 0.0, np.sqrt(3.0) * nu
    best = None
    # expand until the realized ratio saturates or overshoots
    for _ in range(40):
        p, clipped, ratios = realize(hi)
        reached = max(ratios)
        if best is None or abs(reached - nu) < abs(best[3] - nu):
            best = (p, clipped, ratios, reached, hi)
        if reached >= nu or hi > 64.0:
            break
        hi *= 2.0
    if max(best[2]) < nu * (1.0 - NU_TOLERANCE):
        raise ValidationError(
            f"requested nonuniformity nu={nu} is unreachable after clipping to "
            f"({eps}, {1 - eps}); best realized {max(best[2]):.4g}. "
            f"Use a more extreme base propensity interval or a smaller nu"
        )
    if best[3] > nu:
        # bisect for the width whose realized ratio matches the request; one
        # percent of nu is far inside the acceptance window, so stop there
        hi = best[4]
        for _ in range(40):
            if abs(best[3] - nu) <= 0.01 * nu:
                break
            mid = 0.5 * (lo + hi)
            p, clipped, ratios = realize(mid)
            reached = max(ratios)
            if abs(reached - nu) < abs(best[3] - nu):
                best = (p, clipped, ratios, reached, mid)
            if reached > nu:
                hi = mid
            else:
                lo = mid
    p, clipped, ratios, reached, _ = best
    if not nu * (1.0 - NU_TOLERANCE) <= reached <= nu * (1.0 + NU_TOLERANCE):
        raise ValidationError(
            f"nonuniform scale search failed: realized {reached:.4g} outside "
            f"the 20% window around nu={nu}"
        )
    return p, clipped, ratios


def build_design(n: int, m: int, family: str, params: dict, seed_or_rng) -> PanelDesign:
    """Construct an assignment design.

    params by family:
      constant:         {"p": value in (0, 1)}
      row_homogeneous:  {"p_low", "p_high"} -- per-unit levels drawn uniformly
      nonuniform:       {"p_low", "p_high", "nu", "epsilon"} -- row levels plus
                        per-entry perturbations scaled so the realized operator
                        norm of P(a) over (sqrt(n) + sqrt(m)) lands within 20%
                        of nu for the worse action; entries are clipped to
                        [epsilon, 1 - epsilon] and the clip count is recorded.
    """
    if n < 1 or m < 1:
        raise ValidationError(f"design shape ({n}, {m}) must be positive")
    if family not in DESIGN_FAMILIES:
        raise ValidationError(f"unknown design family {family!r}; expected one of {DESIGN_FAMILIES}")
    params = dict(params)
    rng = _as_rng(seed_or_rng)
    # default floor/ceiling 0.05; harsh presets may lower it (to 1e-3) so
    # individual entries can graze 0/1 while row means stay bounded away
    eps = float(params.get("epsilon", DEFAULT_PROPENSITY_MARGIN))
    if not 0 < eps < 0.5:
        raise ValidationError(f"epsilon must be in (0, 0.5), got {eps}")

    if family == "constant":
        p = float(params["p"])
        if not eps <= p <= 1.0 - eps:
            raise ValidationError(f"constant propensity {p} outside [{eps}, {1 - eps}]")
        return PanelDesign(propensity=np.full((n, m), p), family=family, params=params)

    lo, hi = float(params["p_low"]), float(params["p_high"])
    if not (eps <= lo <= hi <= 1.0 - eps):
        raise ValidationError(f"propensity interval [{lo}, {hi}] outside [{eps}, {1 - eps}]")
    base = rng.uniform(lo, hi, size=n)

    if family == "row_homogeneous":
        return PanelDesign(propensity=np.tile(base[:, None], (1, m)), family=family,
                           params=params)

    nu = float(params["nu"])
    if nu <= 0:
        raise ValidationError(f"nu must be positive, got {nu}")
    p, clipped, ratios = _nonuniform_propensity(base, nu, eps, rng, m)
    return PanelDesign(propensity=p, family=family, params=params, nu_target=nu,
                       nu_realized=ratios, clip_count=clipped)


def draw_assignments(design: PanelDesign, seed_or_rng) -> np.ndarray:
    """Independent Bernoulli(propensity) draws as a 0/1 float matrix."""
    rng = _as_rng(seed_or_rng)
    u = rng.random(design.propensity.shape)
    return (u < design.propensity).astype(np.float64)


def realize(design: PanelDesign, signal: SignalPair, noise: NoisePair,
            seed: int) -> tuple[PanelInstance, ObservedPanel]:
    """Assemble outcomes Y(a) = A(a) + E(a), draw assignments, mask."""
    shapes = {design.propensity.shape, signal.a0.shape, signal.a1.shape,
              noise.e0.shape, noise.e1.shape}
    if len(shapes) != 1:
        raise ValidationError(f"design/signal/noise shapes disagree: {sorted(shapes)}")
    d = draw_assignments(design, seed)
    instance = PanelInstance(design=design, signal=signal, noise=noise,
                             assignments=d, y0=signal.a0 + noise.e0,
                             y1=signal.a1 + noise.e1, seed=int(seed))
    return instance, observe(instance)


# ---------------------------------------------------------------------------
# serialization: per-matrix CSV and column-major binary, plus whole instances


def save_matrix_csv(a, path) -> None:
    """Write a matrix as CSV: first line "rows,cols", then one row per line
    with entries at 17 significant digits (lossless for float64)."""
    a = as_matrix(a)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{a.shape[0]},{a.shape[1]}\n")
        for row in a:
            fh.write(",".join(format(x, ".17g") for x in row))
            fh.write("\n")


def load_matrix_csv(path) -> np.ndarray:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        try:
            rows, cols = (int(tok) for tok in header.split(","))
        except Exception as exc:
            raise ValidationError(f"{path}: malformed matrix CSV header {header!r}") from exc
        data = [[float(tok) for tok in line.strip().split(",")] for line in fh if line.strip()]
    out = np.array(data, dtype=np.float64)
    if out.shape != (rows, cols):
        raise ValidationError(f"{path}: header promises {(rows, cols)}, found {out.shape}")
    return out


def save_matrix_binary(a, path) -> None:
    """Column-major binary container: magic, little-endian uint64 dims, then
    float64 entries in Fortran order."""
    a = as_matrix(a)
    with open(path, "wb") as fh:
        fh.write(_BINARY_MAGIC)
        fh.write(np.array(a.shape, dtype="<u8").tobytes())
        fh.write(np.asfortranarray(a).tobytes(order="F"))


def load_matrix_binary(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(len(_BINARY_MAGIC))
        if magic != _BINARY_MAGIC:
            raise ValidationError(f"{path}: not a matrix container (bad magic {magic!r})")
        rows, cols = np.frombuffer(fh.read(16), dtype="<u8")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != rows * cols:
        raise ValidationError(f"{path}: expected {rows * cols} entries, found {data.size}")
    return data.reshape((int(rows), int(cols)), order="F").copy()


_INSTANCE_MATRICES = ("propensity", "a0", "a1", "e0", "e1", "assignments", "y0", "y1")


def save_instance(instance: PanelInstance, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    mats = {
        "propensity": instance.design.propensity,
        "a0": instance.signal.a0, "a1": instance.signal.a1,
        "e0": instance.noise.e0, "e1": instance.noise.e1,
        "assignments": instance.assignments,
        "y0": instance.y0, "y1": instance.y1,
    }
    for name, mat in mats.items():
        save_matrix_csv(mat, directory / f"{name}.csv")
    meta = {
        "design_family": instance.design.family,
        "design_params": instance.design.params,
        "nu_target": instance.design.nu_target,
        "nu_realized": list(instance.design.nu_realized) if instance.design.nu_realized else None,
        "clip_count": instance.design.clip_count,
        "rank": instance.signal.rank,
        "signal_entry_bound": instance.signal.entry_bound,
        "singular_values_0": [format(x, ".17g") for x in instance.signal.singular_values_0],
        "singular_values_1": [format(x, ".17g") for x in instance.signal.singular_values_1],
        "noise_entry_bound": instance.noise.entry_bound,
        "noise_law": instance.noise.law,
        "seed": instance.seed,
    }
    with open(directory / "meta.json", "w", encoding="ascii") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_instance(directory) -> PanelInstance:
    directory = Path(directory)
    with open(directory / "meta.json", "r", encoding="ascii") as fh:
        meta = json.load(fh)
    mats = {name: load_matrix_csv(directory / f"{name}.csv") for name in _INSTANCE_MATRICES}
    design = PanelDesign(
        propensity=mats["propensity"], family=meta["design_family"],
        params=meta["design_params"], nu_target=meta["nu_target"],
        nu_realized=tuple(meta["nu_realized"]) if meta["nu_realized"] else None,
        clip_count=meta["clip_count"],
    )
    signal = SignalPair(
        a0=mats["a0"], a1=mats["a1"], rank=meta["rank"],
        entry_bound=meta["signal_entry_bound"],
        singular_values_0=np.array([float(x) for x in meta["singular_values_0"]]),
        singular_values_1=np.array([float(x) for x in meta["singular_values_1"]]),
    )
    noise = NoisePair(e0=mats["e0"], e1=mats["e1"],
                      entry_bound=meta["noise_entry_bound"], law=meta["noise_law"])
    return PanelInstance(design=design, signal=signal, noise=noise,
                         assignments=mats["assignments"], y0=mats["y0"],
                         y1=mats["y1"], seed=meta["seed"])
