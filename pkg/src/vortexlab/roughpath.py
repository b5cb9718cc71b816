"""Brownian driving paths, level-2 enhancements, and controlled-path integrals.

Exactness design
----------------
Several contracts in this module demand *bit-exact* identities in floating
point: the Chen relation for every grid triple, the symmetric-part identity
of the trapezoid enhancement, and partition independence of the compensated
sums for constant and identity-controlled integrands.  To get them,
``sample_brownian`` rounds each Gaussian increment to the dyadic lattice
``INCREMENT_QUANTUM * Z``.  Path values, their pairwise products and all
level-2 accumulations then stay inside the range where IEEE doubles are
closed under +, - and *, so the reconstruction algebra is exact rational
arithmetic in disguise.  ``enhance`` verifies the envelope and refuses paths
that would leave it; the statistical cost of the lattice (about 5e-7 per
increment) is orders of magnitude below every tolerance used downstream.

Level-2 data is stored per fine interval plus two prefix-sum tables, so a
tensor over an arbitrary node pair is an O(1) combination

    B[u,v] = (P[v]-P[u]) + (S[v]-S[u]) - beta_u (x) (beta_v - beta_u)

where P accumulates the per-interval tensors and S the left-point products
beta_j (x) dbeta_j.  With lattice inputs this evaluates the Chen composition
exactly, for any pair, in O(channels^2).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

INCREMENT_QUANTUM = 2.0 ** -21

ITO = "ito"
STRATONOVICH = "stratonovich"
FLAVORS = (ITO, STRATONOVICH)

# Bit-exactness envelope: level-2 partial sums must stay below _VALUE_LIMIT
# (integer part <= 2**53 on the 2**-43 lattice) and level-1 products below
# _PRODUCT_LIMIT (product of lattice integers <= 2**53).
_VALUE_LIMIT = 1024.0
_PRODUCT_LIMIT = 2.0 ** 11


class GridError(ValueError):
    """Invalid time grid or off-grid time."""


class PartitionError(ValueError):
    """Partition not nested in the available grid nodes."""


class PrecisionError(ArithmeticError):
    """Path data leaves the envelope where the level-2 algebra is exact."""


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_j = j*horizon/steps with a power-of-two step count."""

    horizon: float
    steps: int

    def __post_init__(self) -> None:
        if not (isinstance(self.horizon, (int, float)) and self.horizon > 0):
            raise GridError(f"horizon must be positive, got {self.horizon}")
        if not isinstance(self.steps, (int, np.integer)) or self.steps < 2:
            raise GridError(f"steps must be an integer >= 2, got {self.steps}")
        if not _is_power_of_two(int(self.steps)):
            raise GridError(
                f"steps must be a power of two for dyadic coarsening, got {self.steps}"
            )
        times = np.linspace(0.0, float(self.horizon), int(self.steps) + 1)
        object.__setattr__(self, "_times", _readonly(times))

    @property
    def times(self) -> np.ndarray:
        return self._times  # type: ignore[attr-defined]

    @property
    def spacing(self) -> float:
        return float(self.horizon) / float(self.steps)

    def index_of(self, t: float) -> int:
        j = int(round(float(t) / self.spacing))
        if not (0 <= j <= self.steps) or self.times[j] != t:
            raise GridError(f"time {t!r} is not a node of this grid")
        return j

    def window_indices(self, start: float, end: float) -> np.ndarray:
        """Indices of all nodes with start <= t <= end."""
        if not (0.0 <= start < end <= self.horizon):
            raise GridError(f"invalid window [{start}, {end}]")
        lo = int(np.searchsorted(self.times, start, side="left"))
        hi = int(np.searchsorted(self.times, end, side="right"))
        idx = np.arange(lo, hi)
        if idx.size < 2:
            raise GridError(f"window [{start}, {end}] contains fewer than two nodes")
        return idx


@dataclass(frozen=True)
class DrivingPath:
    """Sampled multichannel path with values (steps+1, channels), zero at t=0."""

    grid: TimeGrid
    values: np.ndarray
    seed: int | None = None

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != self.grid.steps + 1 or v.shape[1] < 1:
            raise ValueError(
                f"values must have shape (steps+1, channels), got {v.shape}"
            )
        if not np.all(v[0] == 0.0):
            raise ValueError("path values must vanish at t=0")
        object.__setattr__(self, "values", _readonly(v))

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    def subsample(self, stride: int) -> "DrivingPath":
        """Dyadic coarsening: keep every stride-th node (stride a power of two)."""
        if not _is_power_of_two(stride) or self.grid.steps // stride < 2:
            raise GridError(f"stride {stride} does not yield a valid coarser grid")
        coarse = TimeGrid(self.grid.horizon, self.grid.steps // stride)
        return DrivingPath(coarse, self.values[::stride], seed=self.seed)


def sample_brownian(seed: int, channels: int, grid: TimeGrid) -> DrivingPath:
    """Sample a Brownian path on the grid, increments quantised to the lattice.

    Identical seeds give bit-identical paths.  Increments are independent
    N(0, horizon/steps) draws rounded to INCREMENT_QUANTUM, which preserves
    their distribution to a relative error of order 1e-5 at desk scales.
    """
    if channels < 1:
        raise ValueError(f"channel count must be >= 1, got {channels}")
    rng = np.random.default_rng(seed)
    std = math.sqrt(grid.horizon / grid.steps)
    increments = rng.standard_normal((grid.steps, channels)) * std
    increments = np.round(increments / INCREMENT_QUANTUM) * INCREMENT_QUANTUM
    values = np.vstack([np.zeros((1, channels)), np.cumsum(increments, axis=0)])
    return DrivingPath(grid, values, seed=seed)


@dataclass(frozen=True)
class Enhancement:
    """Per-interval level-2 tensors plus prefix tables for O(1) pair queries."""

    flavor: str
    alpha: float
    step_tensors: np.ndarray  # (steps, N, N)
    tensor_prefix: np.ndarray  # (steps+1, N, N)
    mixed_prefix: np.ndarray  # (steps+1, N, N), cumulative beta_j (x) dbeta_j

    def __post_init__(self) -> None:
        for name in ("step_tensors", "tensor_prefix", "mixed_prefix"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))


def _lattice_check(values: np.ndarray) -> None:
    scaled = values / INCREMENT_QUANTUM
    if not np.all(scaled == np.round(scaled)):
        raise PrecisionError(
            "path values are not on the increment lattice; exact level-2 "
            "algebra is only guaranteed for sample_brownian output (or other "
            f"multiples of {INCREMENT_QUANTUM!r})"
        )


def _envelope_check(values: np.ndarray, *prefixes: np.ndarray) -> None:
    inc = np.diff(values, axis=0)
    if np.max(np.abs(values), initial=0.0) * np.max(np.abs(inc), initial=0.0) > _PRODUCT_LIMIT:
        raise PrecisionError("path magnitude exceeds the exact-product envelope")
    for p in prefixes:
        if np.max(np.abs(p), initial=0.0) > _VALUE_LIMIT:
            raise PrecisionError("level-2 prefix sums exceed the exact-sum envelope")


def _build_enhancement(
    path: DrivingPath, flavor: str, alpha: float, step_tensors: np.ndarray
) -> Enhancement:
    inc = path.increments
    left = path.values[:-1]
    n = path.channels
    mixed_steps = left[:, :, None] * inc[:, None, :]
    zero = np.zeros((1, n, n))
    tensor_prefix = np.concatenate([zero, np.cumsum(step_tensors, axis=0)])
    mixed_prefix = np.concatenate([zero, np.cumsum(mixed_steps, axis=0)])
    _lattice_check(path.values)
    _envelope_check(path.values, tensor_prefix, mixed_prefix)
    return Enhancement(flavor, alpha, step_tensors, tensor_prefix, mixed_prefix)


def enhance(path: DrivingPath, flavor: str, alpha: float = 0.4) -> "RoughPath":
    """Build the level-2 enhancement of a sampled path.

    Ito flavor: left-point sums, so the tensor over a single fine step is
    zero and multi-step tensors arise purely from Chen composition.
    Stratonovich flavor: trapezoid sums, adding half the outer product of the
    step increment with itself on each fine step.
    """
    if flavor not in FLAVORS:
        raise ValueError(f"flavor must be one of {FLAVORS}, got {flavor!r}")
    if not (1.0 / 3.0 < alpha < 0.5):
        raise ValueError(f"alpha must lie in (1/3, 1/2), got {alpha}")
    inc = path.increments
    if flavor == ITO:
        step = np.zeros((path.grid.steps, path.channels, path.channels))
    else:
        step = 0.5 * inc[:, :, None] * inc[:, None, :]
    return RoughPath(path, _build_enhancement(path, flavor, alpha, step))


@dataclass(frozen=True)
class RoughPath:
    """Driving path together with its level-2 enhancement."""

    path: DrivingPath
    enhancement: Enhancement

    @property
    def grid(self) -> TimeGrid:
        return self.path.grid

    @property
    def times(self) -> np.ndarray:
        return self.path.grid.times

    @property
    def values(self) -> np.ndarray:
        return self.path.values

    @property
    def channels(self) -> int:
        return self.path.channels

    @property
    def alpha(self) -> float:
        return self.enhancement.alpha

    @property
    def flavor(self) -> str:
        return self.enhancement.flavor

    def increment(self, u: int, v: int) -> np.ndarray:
        return self.values[v] - self.values[u]

    def levy_area(self, u: int, v: int) -> np.ndarray:
        """Level-2 tensor over grid nodes u < v via the prefix reconstruction."""
        if not (0 <= u < v <= self.grid.steps):
            raise GridError(f"need grid indices 0 <= u < v <= steps, got {u}, {v}")
        e = self.enhancement
        delta = self.values[v] - self.values[u]
        return (
            e.tensor_prefix[v]
            - e.tensor_prefix[u]
            + e.mixed_prefix[v]
            - e.mixed_prefix[u]
            - self.values[u][:, None] * delta[None, :]
        )

    def levy_area_pairs(self, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
        """Vectorised levy_area over index arrays; returns (len(us), N, N)."""
        us = np.asarray(us, dtype=np.int64)
        vs = np.asarray(vs, dtype=np.int64)
        if np.any(us >= vs) or np.any(us < 0) or np.any(vs > self.grid.steps):
            raise GridError("pair indices must satisfy 0 <= u < v <= steps")
        e = self.enhancement
        delta = self.values[vs] - self.values[us]
        return (
            e.tensor_prefix[vs]
            - e.tensor_prefix[us]
            + e.mixed_prefix[vs]
            - e.mixed_prefix[us]
            - self.values[us][:, :, None] * delta[:, None, :]
        )


def chen_defect(rp: RoughPath, u: float, w: float, v: float) -> np.ndarray:
    """B[u,v] - B[u,w] - B[w,v] - dbeta[u,w] (x) dbeta[w,v] for grid times u<w<v.

    Exactly zero for every enhancement built here: with lattice path data the
    float evaluation coincides with the rational-arithmetic value, and the
    identity holds over the rationals by construction.
    """
    iu, iw, iv = rp.grid.index_of(u), rp.grid.index_of(w), rp.grid.index_of(v)
    if not (iu < iw < iv):
        raise GridError(f"need u < w < v on the grid, got indices {iu}, {iw}, {iv}")
    cross = rp.increment(iu, iw)[:, None] * rp.increment(iw, iv)[None, :]
    return rp.levy_area(iu, iv) - rp.levy_area(iu, iw) - rp.levy_area(iw, iv) - cross


def chen_defect_of(pair_map, values: np.ndarray, iu: int, iw: int, iv: int) -> np.ndarray:
    """Chen defect of an arbitrary pair-indexed tensor map (diagnostic form).

    ``pair_map(u, v)`` supplies the candidate level-2 tensor; the defect is
    linear in it, so perturbing the map on a cell shows up in every triple
    whose middle node splits that cell.
    """
    cross = (values[iw] - values[iu])[:, None] * (values[iv] - values[iw])[None, :]
    return pair_map(iu, iv) - pair_map(iu, iw) - pair_map(iw, iv) - cross


def holder_norm(times: np.ndarray, values: np.ndarray, exponent: float) -> float:
    """sup over node pairs of |X_v - X_u| / (v-u)^exponent.

    ``values`` may be (K,) scalar or (K, d) vector samples; vector increments
    are measured in the Euclidean norm.
    """
    times = np.asarray(times, dtype=np.float64)
    vals = np.asarray(values, dtype=np.float64)
    if times.ndim != 1 or times.size < 2:
        raise GridError("window must contain at least two nodes")
    if vals.ndim == 1:
        vals = vals[:, None]
    best = 0.0
    for i in range(times.size - 1):
        d = vals[i + 1 :] - vals[i]
        mag = np.sqrt(np.sum(d * d, axis=1))
        q = mag / (times[i + 1 :] - times[i]) ** exponent
        best = max(best, float(np.max(q)))
    return best


def rough_norms(
    rp: RoughPath, start: int, end: int, exponent: float | None = None
) -> tuple[float, float]:
    """(level-1, level-2) Hoelder norms over grid indices [start, end].

    Level 1 uses the exponent itself, level 2 twice the exponent, matching
    the usual alpha / 2*alpha grading of a rough path.
    """
    if exponent is None:
        exponent = rp.alpha
    if not (0 <= start < end <= rp.grid.steps):
        raise GridError(f"invalid index window [{start}, {end}]")
    times = rp.times[start : end + 1]
    level1 = holder_norm(times, rp.values[start : end + 1], exponent)
    best = 0.0
    for u in range(start, end):
        vs = np.arange(u + 1, end + 1)
        tensors = rp.levy_area_pairs(np.full(vs.shape, u), vs)
        mag = np.sqrt(np.sum(tensors * tensors, axis=(1, 2)))
        q = mag / (rp.times[vs] - rp.times[u]) ** (2 * exponent)
        best = max(best, float(np.max(q)))
    return level1, best


@dataclass(frozen=True)
class ControlledPath:
    """Scalar components with a first-order expansion along the driver.

    ``values`` holds Y with shape (K, m); ``derivative`` holds the expansion
    coefficient Y' with shape (K, m, N).  The window must start strictly
    after t=0 (the solution this feeds on is singular there).
    """

    node_indices: np.ndarray  # (K,) grid indices
    times: np.ndarray  # (K,)
    values: np.ndarray  # (K, m)
    derivative: np.ndarray  # (K, m, N)

    def __post_init__(self) -> None:
        idx = np.asarray(self.node_indices, dtype=np.int64)
        t = np.asarray(self.times, dtype=np.float64)
        y = np.asarray(self.values, dtype=np.float64)
        d = np.asarray(self.derivative, dtype=np.float64)
        if idx.ndim != 1 or idx.size < 2 or np.any(np.diff(idx) <= 0):
            raise ValueError("node_indices must be strictly increasing, length >= 2")
        if t.shape != idx.shape:
            raise ValueError("times must match node_indices")
        if t[0] <= 0.0:
            raise ValueError("controlled windows must start strictly after t=0")
        if y.ndim != 2 or y.shape[0] != idx.size:
            raise ValueError(f"values must have shape (K, m), got {y.shape}")
        if d.shape[:2] != y.shape or d.ndim != 3:
            raise ValueError(f"derivative must have shape (K, m, N), got {d.shape}")
        object.__setattr__(self, "node_indices", _readonly(idx))
        object.__setattr__(self, "times", _readonly(t))
        object.__setattr__(self, "values", _readonly(y))
        object.__setattr__(self, "derivative", _readonly(d))

    @property
    def components(self) -> int:
        return self.values.shape[1]

    def positions_of(self, grid_indices: np.ndarray) -> np.ndarray:
        pos = np.searchsorted(self.node_indices, grid_indices)
        ok = (pos < self.node_indices.size) & (
            self.node_indices[np.minimum(pos, self.node_indices.size - 1)]
            == grid_indices
        )
        if not np.all(ok):
            raise PartitionError("partition nodes must carry controlled-path values")
        return pos


def rough_integral(
    controlled: ControlledPath, rp: RoughPath, partition: np.ndarray
) -> np.ndarray:
    """Compensated Riemann sum of a controlled path against (beta, B).

    Over each partition cell [t_i, t_{i+1}] the contribution is
    Y[t_i] (x) dbeta + Y'[t_i] . B, and the result is the (m, N) matrix of
    integrals of each component against each channel.  For a fixed controlled
    path the values over dyadic refinements converge; the finest-partition
    value plays the role of the integral downstream.
    """
    part = np.asarray(partition, dtype=np.int64)
    if part.ndim != 1 or part.size < 2 or np.any(np.diff(part) <= 0):
        raise PartitionError("partition must be a strictly increasing index array")
    if part[0] < 0 or part[-1] > rp.grid.steps:
        raise PartitionError("partition leaves the rough-path grid")
    pos = controlled.positions_of(part)
    left, right = part[:-1], part[1:]
    dbeta = rp.values[right] - rp.values[left]
    tensors = rp.levy_area_pairs(left, right)
    y_left = controlled.values[pos[:-1]]
    yp_left = controlled.derivative[pos[:-1]]
    first = y_left[:, :, None] * dbeta[:, None, :]
    second = np.einsum("cmk,ckn->cmn", yp_left, tensors)
    return np.sum(first + second, axis=0)


def dyadic_partitions(start: int, end: int, levels: int | None = None) -> list[np.ndarray]:
    """Nested partitions of [start, end] by repeated index bisection.

    Level 0 is the two endpoints; each level splits every cell at its floor
    midpoint.  Refinement stops when every cell is a single grid step.
    """
    if start >= end:
        raise PartitionError(f"empty window [{start}, {end}]")
    parts = [np.array([start, end], dtype=np.int64)]
    while levels is None or len(parts) < levels:
        prev = parts[-1]
        mids = (prev[:-1] + prev[1:]) // 2
        nxt = np.unique(np.concatenate([prev, mids]))
        if nxt.size == prev.size:
            break
        parts.append(nxt)
    return parts


@dataclass(frozen=True)
class RateFit:
    """Least-squares slope of log(diff) against log(mesh), with fit residual."""

    slope: float
    intercept: float
    rms_residual: float
    meshes: tuple[float, ...]
    diffs: tuple[float, ...]

    @property
    def is_exact(self) -> bool:
        return math.isinf(self.slope)


def fit_rate(meshes, diffs) -> RateFit:
    meshes = np.asarray(meshes, dtype=np.float64)
    diffs = np.asarray(diffs, dtype=np.float64)
    if np.all(diffs == 0.0):
        return RateFit(math.inf, 0.0, 0.0, tuple(meshes), tuple(diffs))
    keep = diffs > 0.0
    if np.count_nonzero(keep) < 2:
        return RateFit(math.inf, 0.0, 0.0, tuple(meshes), tuple(diffs))
    x = np.log(meshes[keep])
    y = np.log(diffs[keep])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    rms = float(np.sqrt(np.mean(resid * resid)))
    return RateFit(float(slope), float(intercept), rms, tuple(meshes), tuple(diffs))


def refinement_rate(
    controlled: ControlledPath, rp: RoughPath, levels: int | None = None
) -> RateFit:
    """Empirical convergence rate of the compensated sums under refinement.

    Fits log|I(P_k) - I(P_finest)| against log|P_k| over the dyadic ladder;
    an exactly partition-independent integrand (all differences zero) is
    reported with the +inf sentinel slope.
    """
    nodes = controlled.node_indices
    if nodes.size < 16:
        raise GridError("refinement window must contain at least 16 grid nodes")
    ladder = dyadic_partitions(0, nodes.size - 1, levels)
    finest = rough_integral(controlled, rp, nodes)
    meshes, diffs = [], []
    times = controlled.times
    for pos in ladder:
        part = nodes[pos]
        value = rough_integral(controlled, rp, part)
        meshes.append(float(np.max(np.diff(times[pos]))))
        diffs.append(float(np.sqrt(np.sum((value - finest) ** 2))))
    return fit_rate(meshes, diffs)


# ---------------------------------------------------------------------------
# Two-file store: JSON header + CSV values.


def save_rough_path(rp: RoughPath, directory, basename: str = "rough_path") -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n = rp.channels
    header = {
        "schema_version": 1,
        "seed": rp.path.seed,
        "channels": n,
        "horizon": rp.grid.horizon,
        "steps": rp.grid.steps,
        "alpha": rp.alpha,
        "flavor": rp.flavor,
    }
    header_path = directory / f"{basename}.json"
    header_path.write_text(json.dumps(header, sort_keys=True, indent=2) + "\n")
    values_path = directory / f"{basename}.csv"
    cols = (
        ["t"]
        + [f"beta_{i + 1}" for i in range(n)]
        + [f"B_{i + 1}_{k + 1}" for i in range(n) for k in range(n)]
    )
    with values_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        steps = rp.enhancement.step_tensors
        for j in range(rp.grid.steps + 1):
            row = [repr(float(rp.times[j]))]
            row += [repr(float(x)) for x in rp.values[j]]
            if j < rp.grid.steps:
                row += [repr(float(x)) for x in steps[j].reshape(-1)]
            else:
                row += [""] * (n * n)
            writer.writerow(row)
    return header_path, values_path


def load_rough_path(directory, basename: str = "rough_path") -> RoughPath:
    directory = Path(directory)
    header = json.loads((directory / f"{basename}.json").read_text())
    n = int(header["channels"])
    grid = TimeGrid(float(header["horizon"]), int(header["steps"]))
    values = np.empty((grid.steps + 1, n))
    steps = np.empty((grid.steps, n, n))
    with (directory / f"{basename}.csv").open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for j, row in enumerate(reader):
            values[j] = [float(x) for x in row[1 : 1 + n]]
            if j < grid.steps:
                steps[j] = np.array([float(x) for x in row[1 + n :]]).reshape(n, n)
    path = DrivingPath(grid, values, seed=header["seed"])
    enh = _build_enhancement(path, header["flavor"], float(header["alpha"]), steps)
    return RoughPath(path, enh)
