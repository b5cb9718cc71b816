"""Run orchestration: validated configs, pipeline stages, manifests, sweeps.

A single JSON config drives everything; no tunable lives on the command
line.  Every stage writes its artifacts under the output directory and the
run manifest records a content digest per file, so reruns with the same
config and seed are byte-comparable.  Wall-clock entries in the manifest are
informational and excluded from any determinism comparison.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .roughpath import (
    FLAVORS,
    RoughPath,
    TimeGrid,
    enhance,
    load_rough_path,
    sample_brownian,
    save_rough_path,
)
from .solver import (
    SolverConfig,
    Trajectory,
    picard_solve,
    solver_node_indices,
    weighted_sup_norm,
    zero_nonlinearity,
)
from .spectral import (
    BoxGrid,
    SpectralField,
    bump_fields,
    gaussian_convolution_operator,
    load_field,
    lp_norm,
    partial_derivative,
    project_divergence_free,
    random_field,
    save_field,
    to_spectral,
)
from .transform import (
    NoiseModel,
    TransformProvider,
    bound_series,
    build_transform,
    dominance_margins,
    smallness_gate,
)
from . import verifier as vf
from .spectral import vorticity_nonlinearity

STAGES = ("enhance", "gate", "simulate", "verify")


class ConfigError(ValueError):
    """Invalid run configuration; carries the full list of diagnostics."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))


def thread_count() -> int:
    raw = os.environ.get("VORTEX_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _digest_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _digest_config(raw: dict) -> str:
    return hashlib.sha256(
        json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


@dataclass
class RunConfig:
    """Validated run configuration (see ``validate_config`` for the schema)."""

    raw: dict
    seed: int
    box: BoxGrid
    time_grid: TimeGrid
    channels: int
    alpha: float
    flavor: str
    noise_spec: dict
    gate_spec: dict
    initial_spec: dict
    solver_spec: dict
    verifier_spec: dict
    stages: tuple[str, ...]
    memory_cap: int

    @property
    def digest(self) -> str:
        return _digest_config(self.raw)


def _get(section: dict, key: str, default=None):
    return section.get(key, default) if isinstance(section, dict) else default


def validate_config(raw: dict) -> RunConfig:
    """Check every field and report all problems at once, no silent defaults
    for out-of-range exponents."""
    problems: list[str] = []

    seed = raw.get("seed")
    if not isinstance(seed, int):
        problems.append("seed: required integer")
        seed = 0

    box_sec = raw.get("box", {})
    modes = _get(box_sec, "modes", 16)
    size = _get(box_sec, "size", 32.0)
    box = None
    try:
        box = BoxGrid(float(size), int(modes))
    except (TypeError, ValueError) as exc:
        problems.append(f"box: {exc}")

    rp_sec = raw.get("rough_path", {})
    channels = _get(rp_sec, "channels", 2)
    horizon = _get(rp_sec, "horizon", 1.0)
    steps = _get(rp_sec, "steps", 4096)
    alpha = _get(rp_sec, "alpha", 0.4)
    flavor = _get(rp_sec, "flavor", "ito")
    time_grid = None
    try:
        time_grid = TimeGrid(float(horizon), int(steps))
    except (TypeError, ValueError) as exc:
        problems.append(f"rough_path: {exc}")
    if not isinstance(channels, int) or channels < 1:
        problems.append(f"rough_path.channels: need a positive integer, got {channels!r}")
        channels = 1
    if not (1.0 / 3.0 < float(alpha) < 0.5):
        problems.append(f"rough_path.alpha: must lie in (1/3, 1/2), got {alpha}")
    if flavor not in FLAVORS:
        problems.append(f"rough_path.flavor: must be one of {FLAVORS}, got {flavor!r}")

    noise_sec = raw.get("noise", {})
    lambdas = _get(noise_sec, "lambda")
    kernels = _get(noise_sec, "kernels")
    if not isinstance(lambdas, list) or len(lambdas) != channels:
        problems.append("noise.lambda: need one drift constant per channel")
    if not isinstance(kernels, list) or len(kernels) != channels:
        problems.append("noise.kernels: need one kernel spec per channel")
    else:
        for i, k in enumerate(kernels):
            kind = _get(k, "type")
            if kind not in ("gaussian", "zero", "store"):
                problems.append(f"noise.kernels[{i}].type: unknown kind {kind!r}")
            elif kind == "gaussian":
                if not (_get(k, "sigma", 0) or 0) > 0:
                    problems.append(f"noise.kernels[{i}].sigma: must be positive")
                if "mass" not in k:
                    problems.append(f"noise.kernels[{i}].mass: required")
            elif kind == "store" and not _get(k, "path"):
                problems.append(f"noise.kernels[{i}].path: required for store kernels")

    gate_sec = raw.get("gate", {})
    c_star = _get(gate_sec, "c_star", 0.01)
    if not (isinstance(c_star, (int, float)) and c_star > 0):
        problems.append(f"gate.c_star: must be positive, got {c_star!r}")

    init_sec = raw.get("initial_data", {})
    kind = _get(init_sec, "type")
    if kind not in ("random", "single_mode", "store"):
        problems.append(f"initial_data.type: unknown kind {kind!r}")
    if kind == "single_mode" and not isinstance(_get(init_sec, "k"), list):
        problems.append("initial_data.k: required integer triple for single_mode data")
    if kind == "store" and not _get(init_sec, "path"):
        problems.append("initial_data.path: required for store data")
    if _get(init_sec, "norm_target") is not None and _get(init_sec, "margin") is not None:
        problems.append("initial_data: norm_target and margin are mutually exclusive")

    solver_sec = raw.get("solver", {})
    try:
        solver_cfg_probe = SolverConfig(
            p=float(_get(solver_sec, "p", 1.8)),
            epsilon=float(_get(solver_sec, "epsilon", 0.05)),
            alpha=float(alpha),
            horizon=float(horizon),
            num_nodes=int(_get(solver_sec, "num_nodes", 32)),
            tolerance=float(_get(solver_sec, "tolerance", 1e-10)),
            max_iterations=int(_get(solver_sec, "max_iterations", 50)),
            c_star=float(c_star),
        )
        del solver_cfg_probe
    except (TypeError, ValueError) as exc:
        problems.append(f"solver: {exc}")

    ver_sec = raw.get("verifier", {})
    window = _get(ver_sec, "window", [0.25, 0.75])
    if (
        not isinstance(window, list)
        or len(window) != 2
        or not (0.0 < float(window[0]) < float(window[1]) <= float(horizon))
    ):
        problems.append(f"verifier.window: need 0 < start < end <= horizon, got {window!r}")

    stages = raw.get("stages", list(STAGES))
    if not isinstance(stages, list) or any(s not in STAGES for s in stages):
        problems.append(f"stages: entries must come from {STAGES}, got {stages!r}")
        stages = []

    memory_cap = raw.get("memory_cap_bytes", 2 << 30)

    if problems:
        raise ConfigError(problems)
    return RunConfig(
        raw=raw,
        seed=seed,
        box=box,
        time_grid=time_grid,
        channels=channels,
        alpha=float(alpha),
        flavor=flavor,
        noise_spec=noise_sec,
        gate_spec=gate_sec,
        initial_spec=init_sec,
        solver_spec=solver_sec,
        verifier_spec=ver_sec,
        stages=tuple(stages),
        memory_cap=int(memory_cap),
    )


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError([f"cannot read config file {path}: {exc}"])
    return validate_config(raw)


def make_noise(config: RunConfig) -> NoiseModel:
    kernels = []
    for spec in config.noise_spec["kernels"]:
        kind = spec["type"]
        if kind == "zero":
            kernels.append(None)
        elif kind == "gaussian":
            kernels.append(
                gaussian_convolution_operator(
                    config.box, float(spec["sigma"]), float(spec["mass"])
                )
            )
        else:
            from .spectral import convolution_operator_from_kernel

            stored = load_field(spec["path"])
            kernels.append(
                convolution_operator_from_kernel(config.box, stored.to_physical()[0])
            )
    return NoiseModel(
        tuple(float(x) for x in config.noise_spec["lambda"]),
        tuple(kernels),
        require_dominance=bool(config.noise_spec.get("global_mode", False)),
    )


def make_initial_data(config: RunConfig, eta_sup: float | None = None) -> SpectralField:
    """Build, project (divergence-free, mean-zero) and scale the initial field."""
    spec = config.initial_spec
    kind = spec["type"]
    if kind == "random":
        u0 = random_field(
            config.box,
            int(spec.get("seed", config.seed)),
            decay=float(spec.get("decay", 2.0)),
        )
    elif kind == "single_mode":
        k = [int(x) for x in spec["k"]]
        x = config.box.coordinates
        phase = (
            2.0
            * math.pi
            * (k[0] * x[0] + k[1] * x[1] + k[2] * x[2])
            / config.box.size
        )
        phys = np.zeros((3,) + phase.shape)
        phys[int(spec.get("component", 2))] = np.cos(phase)
        u0 = to_spectral(config.box, phys)
    else:
        u0 = load_field(spec["path"])
    u0 = project_divergence_free(u0, remove_mean=True)
    norm_target = spec.get("norm_target")
    margin = spec.get("margin")
    if margin is not None:
        if eta_sup is None:
            raise ValueError("margin-mode initial data needs the gate bound first")
        norm_target = float(config.gate_spec.get("c_star", 0.01)) / (
            float(margin) * eta_sup
        )
    if norm_target is not None:
        current = lp_norm(u0, 1.5)
        if current == 0.0:
            raise ValueError("cannot scale a zero initial field to a norm target")
        u0 = u0 * (float(norm_target) / current)
    return u0


@dataclass
class RunState:
    """In-memory artifacts shared by consecutive pipeline stages."""

    rough: RoughPath | None = None
    noise: NoiseModel | None = None
    gate_report: object = None
    eta_sup: float | None = None
    u0: SpectralField | None = None
    trajectory: Trajectory | None = None


# ---------------------------------------------------------------------------
# Trajectory store


def save_trajectory(traj: Trajectory, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    names = []
    for j in range(len(traj.fields)):
        name = f"node_{j:06d}"
        names.append(name)
        hp, bp = save_field(traj.fields[j], directory / name)
        written += [hp, bp]
    manifest = {
        "schema_version": 1,
        "node_indices": [int(x) for x in traj.node_indices],
        "times": [float(t) for t in traj.times],
        "fields": names,
        "iterations": traj.iterations,
        "distances": list(traj.distances),
        "ratios": list(traj.ratios),
        "converged": traj.converged,
        "gate_forced": traj.gate_forced,
        "solver": {
            "p": traj.config.p,
            "q": traj.config.q,
            "epsilon": traj.config.epsilon,
            "alpha": traj.config.alpha,
            "horizon": traj.config.horizon,
            "num_nodes": traj.config.num_nodes,
            "tolerance": traj.config.tolerance,
            "max_iterations": traj.config.max_iterations,
            "c_star": traj.config.c_star,
        },
    }
    mp = directory / "manifest.json"
    mp.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    written.append(mp)
    return written


def load_trajectory(
    directory, time_grid: TimeGrid, provider: TransformProvider, nonlinearity=vorticity_nonlinearity
) -> Trajectory:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    s = manifest["solver"]
    config = SolverConfig(
        p=s["p"],
        epsilon=s["epsilon"],
        alpha=s["alpha"],
        horizon=s["horizon"],
        num_nodes=s["num_nodes"],
        tolerance=s["tolerance"],
        max_iterations=s["max_iterations"],
        c_star=s["c_star"],
    )
    fields = tuple(load_field(directory / name) for name in manifest["fields"])
    node_idx = np.array(manifest["node_indices"], dtype=np.int64)
    integrands = []
    for j, grid_idx in enumerate(node_idx):
        tr = provider.at_index(int(grid_idx))
        integrands.append(tr.apply(nonlinearity(tr.apply(fields[j])), inverse=True))
    return Trajectory(
        config=config,
        time_grid=time_grid,
        node_indices=node_idx,
        times=np.array(manifest["times"]),
        fields=fields,
        integrands=tuple(integrands),
        iterations=int(manifest["iterations"]),
        distances=tuple(manifest["distances"]),
        ratios=tuple(manifest["ratios"]),
        converged=bool(manifest["converged"]),
        gate_forced=bool(manifest["gate_forced"]),
    )


# ---------------------------------------------------------------------------
# Stages


def stage_enhance(config: RunConfig, outdir: Path, state: RunState) -> list[Path]:
    path = sample_brownian(config.seed, config.channels, config.time_grid)
    state.rough = enhance(path, config.flavor, config.alpha)
    hp, vp = save_rough_path(state.rough, outdir)
    return [hp, vp]


def _ensure_rough(config: RunConfig, outdir: Path, state: RunState) -> RoughPath:
    if state.rough is None:
        if (outdir / "rough_path.json").exists():
            state.rough = load_rough_path(outdir)
        else:
            path = sample_brownian(config.seed, config.channels, config.time_grid)
            state.rough = enhance(path, config.flavor, config.alpha)
    return state.rough


def stage_gate(config: RunConfig, outdir: Path, state: RunState) -> list[Path]:
    rough = _ensure_rough(config, outdir, state)
    state.noise = state.noise or make_noise(config)
    solver_sec = config.solver_spec
    p = float(solver_sec.get("p", 1.8))
    q = 1.0 / (2.0 / p - 1.0 / 3.0)
    series = bound_series(state.noise, rough.path, p, q)
    state.eta_sup = series.sup
    state.u0 = make_initial_data(config, eta_sup=series.sup)
    report = smallness_gate(
        state.u0, series.sup, float(config.gate_spec.get("c_star", 0.01)), state.noise
    )
    state.gate_report = report
    out = outdir / "gate_report.json"
    out.write_text(json.dumps(report.to_json_dict(), sort_keys=True, indent=2) + "\n")
    return [out]


def stage_simulate(config: RunConfig, outdir: Path, state: RunState) -> list[Path]:
    rough = _ensure_rough(config, outdir, state)
    state.noise = state.noise or make_noise(config)
    if state.gate_report is None:
        stage_gate(config, outdir, state)
    force = bool(config.gate_spec.get("force", False))
    solver_sec = config.solver_spec
    cfg = SolverConfig(
        p=float(solver_sec.get("p", 1.8)),
        epsilon=float(solver_sec.get("epsilon", 0.05)),
        alpha=config.alpha,
        horizon=config.time_grid.horizon,
        num_nodes=int(solver_sec.get("num_nodes", 32)),
        tolerance=float(solver_sec.get("tolerance", 1e-10)),
        max_iterations=int(solver_sec.get("max_iterations", 50)),
        c_star=float(config.gate_spec.get("c_star", 0.01)),
    )
    provider = TransformProvider(state.noise, rough.path, config.box)
    traj = picard_solve(
        cfg,
        config.time_grid,
        state.u0,
        provider,
        gate_passed=state.gate_report.passed,
        force=force,
    )
    state.trajectory = traj
    written = save_trajectory(traj, outdir / "trajectory")
    diag = outdir / "diagnostics.csv"
    w1 = 1.0 - 3.0 / (2.0 * cfg.p)
    w2 = 1.5 * (1.0 - 1.0 / cfg.p)
    with diag.open("w") as fh:
        fh.write("t,norm_p,weighted_norm,weighted_deriv_norm\n")
        for j, t in enumerate(traj.times):
            base = lp_norm(traj.fields[j], cfg.p)
            deriv = max(
                lp_norm(partial_derivative(traj.fields[j], a), cfg.p) for a in range(3)
            )
            tw = float(t)
            fh.write(
                f"{tw!r},{base!r},{(tw ** w1 * base if tw > 0 else 0.0)!r},"
                f"{(tw ** w2 * deriv if tw > 0 else 0.0)!r}\n"
            )
    ratios = outdir / "contraction.csv"
    with ratios.open("w") as fh:
        fh.write("iteration,distance,ratio\n")
        for i, d in enumerate(traj.distances):
            r = traj.ratios[i - 1] if 0 < i <= len(traj.ratios) else ""
            fh.write(f"{i + 1},{d!r},{r!r}\n" if r != "" else f"{i + 1},{d!r},\n")
    return written + [diag, ratios]


def stage_verify(config: RunConfig, outdir: Path, state: RunState) -> list[Path]:
    rough = _ensure_rough(config, outdir, state)
    state.noise = state.noise or make_noise(config)
    if state.trajectory is None:
        provider = TransformProvider(state.noise, rough.path, config.box)
        state.trajectory = load_trajectory(
            outdir / "trajectory", config.time_grid, provider
        )
    traj = state.trajectory
    ver = config.verifier_spec
    window = tuple(float(x) for x in ver.get("window", [0.25, 0.75]))
    levels = int(ver.get("partition_levels", 6))
    n_phis = int(ver.get("phis", 2))
    phi_seed = int(ver.get("phi_seed", config.seed + 1))
    phis = bump_fields(config.box, n_phis, phi_seed)

    checks: dict[str, dict] = {}

    # Level-2 identities on the driving path.
    rng = np.random.default_rng(config.seed + 2)
    steps = rough.grid.steps
    tri = np.sort(
        rng.choice(steps + 1, size=(100, 3), replace=True), axis=1
    )
    tri = tri[(tri[:, 0] < tri[:, 1]) & (tri[:, 1] < tri[:, 2])]
    cross = (rough.values[tri[:, 1]] - rough.values[tri[:, 0]])[:, :, None] * (
        rough.values[tri[:, 2]] - rough.values[tri[:, 1]]
    )[:, None, :]
    defect = (
        rough.levy_area_pairs(tri[:, 0], tri[:, 2])
        - rough.levy_area_pairs(tri[:, 0], tri[:, 1])
        - rough.levy_area_pairs(tri[:, 1], tri[:, 2])
        - cross
    )
    chen_max = float(np.max(np.abs(defect))) if defect.size else 0.0
    checks["chen_relation"] = {"max_defect": chen_max, "pass": chen_max == 0.0}

    other = enhance(
        rough.path, "stratonovich" if rough.flavor == "ito" else "ito", rough.alpha
    )
    left, trap = (rough, other) if rough.flavor == "ito" else (other, rough)
    windows = []
    for _ in range(20):
        u, v = np.sort(rng.choice(steps + 1, size=2, replace=False))
        if v - u >= 16:
            windows.append((int(u), int(v)))
    bracket = vf.bracket_identities(left, trap, windows)
    checks["bracket_identities"] = {
        "symmetric_defect": bracket.symmetric_defect,
        "covariation_defect": bracket.covariation_defect,
        "diag_pass": bracket.diag_pass,
        "offdiag_pass": bracket.offdiag_pass,
        "pass": bracket.symmetric_defect == 0.0
        and bracket.covariation_defect == 0.0
        and bracket.diag_pass,
    }

    # Transform identities.
    mid = steps // 2
    gamma = build_transform(
        state.noise, config.box, rough.values[mid], float(rough.times[mid])
    )
    recip = float(
        np.max(np.abs(gamma.forward_multiplier * gamma.inverse_multiplier - 1.0))
    )
    gamma_rev = build_transform(
        state.noise,
        config.box,
        rough.values[mid],
        float(rough.times[mid]),
        order=list(reversed(range(state.noise.channels))),
    )
    comm = float(
        np.max(np.abs(gamma.forward_multiplier - gamma_rev.forward_multiplier))
        / np.max(np.abs(gamma.forward_multiplier))
    )
    checks["transform_identities"] = {
        "reciprocal_defect": recip,
        "commutation_defect": comm,
        "pass": recip < 1e-12 and comm < 1e-12,
    }

    # Observable checks per test field, embarrassingly parallel.
    def run_phi(phi):
        obs = vf.build_observable(traj, rough, state.noise, phi, window)
        ladder = vf.rough_weak_residual(
            traj, rough, state.noise, phi, obs, levels=levels
        )
        quot = vf.remainder_quotients(obs, rough, rough.alpha)
        quot2 = vf.remainder_quotients(obs.subsample(2), rough, rough.alpha)
        return obs, ladder, quot, quot2

    workers = thread_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_phi, phis))
    else:
        results = [run_phi(phi) for phi in phis]

    ladder_rows = []
    phi_checks = []
    for i, (obs, ladder, quot, quot2) in enumerate(results):
        stable = all(
            a <= 2.0 * b for a, b in zip(quot.remainder, quot2.remainder)
        )
        fit = ladder.rate_to_floor
        ok = fit.slope > 0.0 and fit.rms_residual < 0.5 and stable
        phi_checks.append(
            {
                "phi": i,
                "final_residual": ladder.final_residual,
                "floor_residual": min(ladder.residuals),
                "rate_slope": fit.slope,
                "rate_rms": fit.rms_residual,
                "full_rate_slope": ladder.rate.slope,
                "remainder_quotients": list(quot.remainder),
                "coefficient_quotient": quot.coefficient,
                "quotient_stable": stable,
                "pass": bool(ok),
            }
        )
        for mesh, res in zip(ladder.meshes, ladder.residuals):
            ladder_rows.append((i, mesh, res))
    checks["rough_weak_form"] = {
        "per_phi": phi_checks,
        "pass": all(c["pass"] for c in phi_checks),
    }

    fit = vf.taylor_rate(
        state.noise,
        config.box,
        phis[0],
        rough,
        start=steps // 4,
        span=steps // 4,
        levels=int(ver.get("taylor_levels", 5)),
    )
    checks["transform_taylor"] = {
        "exponent": fit.slope,
        "rms": fit.rms_residual,
        "pass": fit.slope > 1.0,
    }

    q = traj.config.q
    cont = vf.integrand_continuity(traj, q, traj.config.epsilon, window)
    checks["integrand_continuity"] = {
        "quotient": cont,
        "pass": math.isfinite(cont),
    }
    checks["observable_continuity"] = {
        "max_jump": vf.observable_continuity(traj, phis[0]),
        "pass": True,
    }

    report = {
        "schema_version": 1,
        "inputs_digest": config.digest,
        "window": list(window),
        "band_limited_surrogate": True,
        "checks": checks,
        "pass": all(c.get("pass", True) for c in checks.values()),
    }
    rp_path = outdir / "verify_report.json"
    rp_path.write_text(json.dumps(report, sort_keys=True, indent=2, default=float) + "\n")
    csv_path = outdir / "refinement.csv"
    with csv_path.open("w") as fh:
        fh.write("phi,mesh,residual\n")
        for i, mesh, res in ladder_rows:
            fh.write(f"{i},{mesh!r},{res!r}\n")
    return [rp_path, csv_path]


_STAGE_FUNCS = {
    "enhance": stage_enhance,
    "gate": stage_gate,
    "simulate": stage_simulate,
    "verify": stage_verify,
}


@dataclass
class RunManifest:
    config_digest: str
    version: str
    stages: list[dict]

    def to_json_dict(self) -> dict:
        return {
            "config_digest": self.config_digest,
            "tool_version": self.version,
            "stages": self.stages,
        }

    def artifact_digests(self) -> dict[str, str]:
        out = {}
        for s in self.stages:
            out.update(s["artifacts"])
        return out


def run_pipeline(config: RunConfig, outdir) -> RunManifest:
    """Execute the configured stages in order, recording artifact digests.

    A stage failure still writes the manifest for the completed prefix, then
    re-raises; reruns with identical config and seed reproduce identical
    artifact digests.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    state = RunState()
    manifest = RunManifest(config_digest=config.digest, version=__version__, stages=[])
    manifest_path = outdir / "run_manifest.json"
    try:
        for name in config.stages:
            t0 = time.perf_counter()
            written = _STAGE_FUNCS[name](config, outdir, state)
            elapsed = time.perf_counter() - t0
            manifest.stages.append(
                {
                    "name": name,
                    "wall_clock_seconds": elapsed,
                    "artifacts": {
                        str(p.relative_to(outdir)): _digest_file(p) for p in written
                    },
                }
            )
    finally:
        manifest_path.write_text(
            json.dumps(manifest.to_json_dict(), sort_keys=True, indent=2) + "\n"
        )
    return manifest


def estimate_sweep_bytes(config: RunConfig, levels: int) -> int:
    n = config.box.modes
    nodes = int(config.solver_spec.get("num_nodes", 32)) * (2 ** max(0, levels - 1))
    return levels * nodes * 3 * n ** 3 * 16 * 2


def sweep(config: RunConfig, axis: str, levels: int, outdir) -> Path:
    """Refinement sweep along one axis, emitting a CSV of (level, residuals).

    ``partition`` refines the compensated-sum partitions on a fixed run,
    ``solver-mesh`` halves the solver mesh per level, ``grid`` doubles the
    box resolution.  A resource guard aborts before allocation when the
    estimate exceeds the configured memory cap.
    """
    if axis not in ("partition", "solver-mesh", "grid"):
        raise ConfigError([f"sweep axis must be partition|solver-mesh|grid, got {axis!r}"])
    if levels < 1:
        raise ConfigError([f"sweep needs at least one level, got {levels}"])
    if estimate_sweep_bytes(config, levels) > config.memory_cap:
        raise MemoryError(
            f"sweep estimate exceeds memory cap ({config.memory_cap} bytes); aborting"
        )
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows: list[tuple] = []

    state = RunState()
    state.rough = enhance(
        sample_brownian(config.seed, config.channels, config.time_grid),
        config.flavor,
        config.alpha,
    )
    state.noise = make_noise(config)
    ver = config.verifier_spec
    window = tuple(float(x) for x in ver.get("window", [0.25, 0.75]))
    phis = bump_fields(config.box, 1, int(ver.get("phi_seed", config.seed + 1)))
    phi = phis[0]

    def solve_with(num_nodes: int, box: BoxGrid | None = None) -> Trajectory:
        if box is None or box == config.box:
            level_config, box, noise = config, config.box, state.noise
        else:
            level_config = validate_config(
                {**config.raw, "box": {"modes": box.modes, "size": box.size}}
            )
            noise = make_noise(level_config)
        p = float(config.solver_spec.get("p", 1.8))
        series = bound_series(noise, state.rough.path, p, 1.0 / (2.0 / p - 1.0 / 3.0))
        u0 = make_initial_data(level_config, eta_sup=series.sup)
        cfg = SolverConfig(
            p=p,
            epsilon=float(config.solver_spec.get("epsilon", 0.05)),
            alpha=config.alpha,
            horizon=config.time_grid.horizon,
            num_nodes=num_nodes,
            tolerance=float(config.solver_spec.get("tolerance", 1e-10)),
            max_iterations=int(config.solver_spec.get("max_iterations", 50)),
            c_star=float(config.gate_spec.get("c_star", 0.01)),
        )
        provider = TransformProvider(noise, state.rough.path, box)
        report = smallness_gate(u0, series.sup, cfg.c_star, noise)
        return picard_solve(
            cfg,
            config.time_grid,
            u0,
            provider,
            gate_passed=report.passed,
            force=bool(config.gate_spec.get("force", False)),
        )

    base_nodes = int(config.solver_spec.get("num_nodes", 32))
    if axis == "partition":
        traj = solve_with(base_nodes)
        obs = vf.build_observable(traj, state.rough, state.noise, phi, window)
        ladder = vf.rough_weak_residual(
            traj, state.rough, state.noise, phi, obs, levels=levels
        )
        for lvl, (mesh, res) in enumerate(zip(ladder.meshes, ladder.residuals)):
            rows.append((lvl, mesh, res, ""))
        rate = ladder.rate.slope
    else:
        residuals = []
        for lvl in range(levels):
            if axis == "solver-mesh":
                nodes = base_nodes * (2 ** lvl)
                traj = solve_with(nodes)
                from .solver import weak_residual

                res = weak_residual(traj, [phi])[0]
                norm = weighted_sup_norm(traj.fields, traj.times, traj.config.p)
                rows.append((lvl, 1.0 / nodes, res, norm))
                residuals.append(res)
            else:
                modes = config.box.modes * (2 ** lvl)
                box = BoxGrid(config.box.size, modes)
                traj = solve_with(base_nodes, box=box)
                norm = weighted_sup_norm(traj.fields, traj.times, traj.config.p)
                rows.append((lvl, 1.0 / modes, "", norm))
                residuals.append(norm)
        if len(residuals) >= 2 and all(isinstance(r, float) and r > 0 for r in residuals):
            x = np.log([r[1] for r in rows])
            y = np.log(residuals)
            rate = float(np.polyfit(x, y, 1)[0])
        else:
            rate = float("nan")
    path = outdir / "sweep.csv"
    with path.open("w") as fh:
        fh.write(f"# axis={axis} fitted_rate={rate!r}\n")
        fh.write("level,mesh,residual,weighted_norm\n")
        for row in rows:
            fh.write(",".join(repr(x) if x != "" else "" for x in row) + "\n")
    return path
