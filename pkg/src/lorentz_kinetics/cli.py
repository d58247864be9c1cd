"""Command line entry point: one subcommand per capability, a JSON manifest per run.

Configuration comes from an optional ``key = value`` file, overridden by
command line flags.  Every file is written atomically; the manifest is the
machine interface and the CSV column schemas are listed in the README.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .grids import atomic_write_text, build_phase_grid, read_field_binary, write_field_csv

OUT_DIR_ENV = "LORENTZ_KINETICS_OUT"
COMMANDS = ("kernels", "evolve", "modes", "phi", "phi-k", "mc", "r2-pairing", "check")
INIT_KINDS = ("equilibrium", "cosine", "custom-file")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    command: str = "check"
    n_theta: int = 8
    n_s: int = 80
    s_max: float = 20.0
    n_h: int = 96
    T: float = 10.0
    dt: float = 0.1
    init: str = "cosine"
    init_file: str = ""
    norms: str = "1,2,inf"
    times: str = ""
    k_list: str = "1,0;0,1;3,4"
    sigma: float = 0.3
    hermite_nodes: int = 8
    n_particles: int = 100_000
    seed: int = 0
    snapshot_times: str = "5"
    hp_probes: int = 4
    c_max: float = 0.5
    c_points: int = 11
    order: int = 3
    level: str = "smoke"
    out_dir: str = field(default_factory=lambda: os.environ.get(OUT_DIR_ENV, "runs"))

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.init not in INIT_KINDS:
            raise ConfigError(f"init must be one of {INIT_KINDS}")
        if self.init == "custom-file" and not self.init_file:
            raise ConfigError("init = custom-file needs init_file")
        if self.level not in ("smoke", "full"):
            raise ConfigError("level must be smoke or full")
        if self.T <= 0 or self.dt <= 0:
            raise ConfigError("T and dt must be positive")


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _convert(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse ``key = value`` lines; '#' starts a comment.  Errors name the line."""
    cfg = ExperimentConfig() if base is None else ExperimentConfig(**asdict(base))
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in body.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        try:
            setattr(cfg, key, _convert(key, raw))
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    return cfg


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


@dataclass
class RunManifest:
    config: dict
    version: str
    wall_clock_seconds: float = 0.0
    checks: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c["status"] != "FAIL" for c in self.checks)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=_json_default)


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _parse_list(text: str) -> list[float]:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _parse_k_list(text: str) -> list[tuple[float, float]]:
    out = []
    for item in text.split(";"):
        if not item.strip():
            continue
        parts = [float(v) for v in item.split(",")]
        if len(parts) != 2:
            raise ConfigError(f"wave vector {item!r} needs two components")
        out.append((parts[0], parts[1]))
    return out


def _norm_orders(text: str) -> list:
    orders = []
    for item in text.split(","):
        item = item.strip()
        orders.append(np.inf if item == "inf" else int(item))
    return orders


def _write_csv(path: Path, header: list[str], rows) -> None:
    rows = np.atleast_2d(np.asarray(rows, float))
    lines = [",".join(header)] + [",".join(repr(float(v)) for v in row) for row in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")


def _grid(cfg: ExperimentConfig):
    return build_phase_grid(cfg.n_theta, cfg.n_s, cfg.s_max, cfg.n_h)


def _datum(cfg: ExperimentConfig, grid):
    from .evolution import cosine_datum, equilibrium_datum, tabulated_datum

    if cfg.init == "equilibrium":
        return equilibrium_datum(grid)
    if cfg.init == "cosine":
        return cosine_datum(grid)
    return tabulated_datum(grid, read_field_binary(cfg.init_file), "custom-file")


def _times(cfg: ExperimentConfig) -> np.ndarray:
    if cfg.times:
        return np.array(_parse_list(cfg.times))
    return np.unique(np.round(np.geomspace(1.0, cfg.T, 8) / cfg.dt) * cfg.dt)


def _fit_or_none(times, values, window):
    from .evolution import fit_power_law

    try:
        slope, const, resid = fit_power_law(times, values, window)
    except ValueError:
        return None
    return {"exponent": slope, "constant": const, "residual": resid, "window": list(window)}


def run_kernels(cfg, out: Path, manifest: RunManifest) -> None:
    from .constants import measure_kernel_constants
    from .grids import gauss_axis, graded_axis
    from .iterated import build_En, build_kernel_tables
    from .kernels import eval_E, eval_Pi, eval_Q

    s = graded_axis(cfg.n_s, cfg.s_max).nodes
    h = gauss_axis(min(cfg.n_h, 16)).nodes
    ss, hh, pp = np.meshgrid(s, h, h, indexing="ij")
    rows = np.column_stack([ss.ravel(), hh.ravel(), pp.ravel(), eval_Q(ss, hh, pp).ravel(),
                            eval_Pi(hh, pp).ravel(), eval_E(ss, hh).ravel()])
    _write_csv(out / "kernels.csv", ["s", "h", "hp", "Q", "Pi", "E"], rows)
    manifest.outputs.append("kernels.csv")
    manifest.constants.update(measure_kernel_constants().as_dict())
    if cfg.order >= 2:
        tables = build_kernel_tables(cfg.order, n_h=min(cfg.n_h, 64))
        en = build_En(cfg.order, tables[0].t_axis, tables[0].h_axis)
        for q, e in zip(tables, en):
            q.save(out / f"q{q.order}.bin")
            e.save(out / f"e{e.order}.bin")
            manifest.outputs += [f"q{q.order}.bin", f"e{e.order}.bin"]
            manifest.constants[f"q{q.order}_mass_max_error"] = float(np.max(np.abs(q.mass() - 1.0)))
            manifest.constants[f"e{e.order}_mass"] = e.mass()


def run_evolve(cfg, out: Path, manifest: RunManifest) -> None:
    from .evolution import equilibrium_distance, reconstruct, solve_trace

    grid = _grid(cfg)
    mu0 = _datum(cfg, grid)
    times = _times(cfg)
    trace = solve_trace(mu0, float(times.max()), cfg.dt)
    mass0 = mu0.total_mass
    orders = _norm_orders(cfg.norms)
    rows = []
    for t in times:
        mu_t = reconstruct(mu0, trace, float(t))
        rows.append([t] + [equilibrium_distance(mu_t, mass0, p) for p in orders])
    rows = np.array(rows)
    names = ["l" + ("inf" if p == np.inf else str(p)) for p in orders]
    _write_csv(out / "series.csv", ["t"] + names, rows)
    report = {"initial_mass": mass0, "times": times, "fits": {}}
    for col, name in enumerate(names, 1):
        report["fits"][name] = _fit_or_none(times, rows[:, col], (min(5.0, times.max()), times.max()))
        report[name] = rows[:, col]
    atomic_write_text(out / "report.json", json.dumps(report, indent=2, default=_json_default))
    manifest.outputs += ["series.csv", "report.json"]
    for name, fit in report["fits"].items():
        if fit is not None:
            manifest.constants[f"{name}_exponent"] = fit["exponent"]
            manifest.constants[f"{name}_constant"] = fit["constant"]


def run_modes(cfg, out: Path, manifest: RunManifest) -> None:
    from .modes import mode_norm_series, solve_mode_trace

    grid = _grid(cfg)
    mu0 = _datum(cfg, grid)
    times = _times(cfg)
    for k in _parse_k_list(cfg.k_list):
        state = solve_mode_trace(k, mu0, float(times.max()), cfg.dt)
        node_times = np.array([state.times[int(round(t / state.dt))] for t in times])
        rep = mode_norm_series(state, node_times)
        name = f"mode_{k[0]:g}_{k[1]:g}.csv"
        _write_csv(out / name, ["t", "l1", "l2", "linf"], np.column_stack([rep.times, rep.l1, rep.l2, rep.linf]))
        manifest.outputs.append(name)
        fit = _fit_or_none(rep.times, rep.l1, (min(5.0, times.max()), times.max()))
        if fit is not None:
            manifest.constants[f"mode_{k[0]:g}_{k[1]:g}_l1_exponent"] = fit["exponent"]


def run_phi(cfg, out: Path, manifest: RunManifest) -> None:
    from .grids import gauss_axis
    from .varphi import reconstruct_trace_via_varphi, scan_contraction, solve_varphi

    scan = scan_contraction(np.linspace(0.0, cfg.c_max, cfg.c_points))
    _write_csv(out / "scan.csv", ["c", "d"], scan.as_rows())
    manifest.constants["d0"] = float(scan.d_values[0])
    manifest.constants["best_c"] = scan.best_c
    manifest.constants["d_best"] = float(scan.d_values.min())

    h_axis = gauss_axis(max(cfg.hp_probes, 2) * 8)
    probes = h_axis.nodes[np.linspace(1, len(h_axis) - 2, cfg.hp_probes).round().astype(int)]
    table = solve_varphi(probes, cfg.T, cfg.dt, n_theta=cfg.n_theta, h_axis=h_axis)
    _write_csv(out / "decay.csv", ["t", "sup_abs_phi", "weighted_sup_abs_phi"], table.decay_rows())
    manifest.constants["phi_weighted_sup"] = table.weighted_sup()

    from .evolution import solve_trace

    grid = _grid(cfg)
    mu0 = _datum(cfg, grid)
    full = solve_varphi(grid.h.nodes, cfg.T, cfg.dt, n_theta=cfg.n_theta, h_axis=grid.h)
    trace = solve_trace(mu0, cfg.T, cfg.dt, op=full.op)
    equivalence = {}
    for t in sorted({cfg.dt * round(v / cfg.dt) for v in (1.0, cfg.T / 2, cfg.T) if v <= cfg.T}):
        rep = reconstruct_trace_via_varphi(mu0, full, t)
        equivalence[f"{t:g}"] = float(np.max(np.abs(rep.total - trace.values[trace.index_of(t)])))
    atomic_write_text(out / "equivalence.json", json.dumps(equivalence, indent=2, sort_keys=True))
    manifest.outputs += ["scan.csv", "decay.csv", "equivalence.json"]
    manifest.constants["representation_max_linf"] = max(equivalence.values())


def run_phi_k(cfg, out: Path, manifest: RunManifest) -> None:
    from .grids import gauss_axis
    from .modes import gk_contraction
    from .varphi import solve_varphi_k

    for k in _parse_k_list(cfg.k_list):
        probes = gauss_axis(cfg.hp_probes).nodes
        table = solve_varphi_k(k, [0.0], probes, cfg.T, cfg.dt, n_theta=cfg.n_theta, n_h=min(cfg.n_h, 16))
        sup = np.max(np.abs(table.values), axis=(1, 2, 3, 4))
        name = f"phi_k_{k[0]:g}_{k[1]:g}.csv"
        _write_csv(out / name, ["t", "sup_abs_phi_k", "weighted_sup_abs_phi_k"],
                   np.column_stack([table.times, sup, (table.times + 1.0) * sup]))
        manifest.outputs.append(name)
        manifest.constants[f"phi_k_{k[0]:g}_{k[1]:g}_weighted_sup"] = table.weighted_sup()
        manifest.constants[f"gk_margin_{k[0]:g}_{k[1]:g}"] = gk_contraction(k).margin


def run_mc(cfg, out: Path, manifest: RunManifest) -> None:
    from .evolution import equilibrium_distance
    from .particles import empirical_field, make_ensemble, step_ensemble

    grid = _grid(cfg)
    if cfg.init == "custom-file":
        raise ConfigError("mc supports init = equilibrium or cosine")
    ens = make_ensemble(cfg.n_particles, cfg.seed, cfg.init)
    for t in sorted(_parse_list(cfg.snapshot_times)):
        ens = step_ensemble(ens, t)
        emp = empirical_field(ens, grid)
        name = f"histogram_t{t:g}.csv"
        write_field_csv(emp, out / name)
        manifest.outputs.append(name)
        manifest.constants[f"mc_l1_distance_t{t:g}"] = equilibrium_distance(emp, 1.0, 1)
    manifest.constants["mc_collisions"] = ens.collisions


def run_r2_pairing(cfg, out: Path, manifest: RunManifest) -> None:
    from .modes import gauss_hermite_k_rule, gaussian_test_hat, schwartz_pairing

    grid = _grid(cfg)
    mu0 = _datum(cfg, grid)
    times = np.concatenate([[0.0], _times(cfg)])
    rule = gauss_hermite_k_rule(cfg.sigma, cfg.hermite_nodes)
    rep = schwartz_pairing(gaussian_test_hat(cfg.sigma), rule, mu0, times, cfg.dt)
    _write_csv(out / "pairing.csv", ["t", "pairing"], np.column_stack([rep.times, rep.values]))
    manifest.outputs.append("pairing.csv")
    manifest.constants["pairing_disk_bound"] = rep.disk_bound


def run_check(cfg, out: Path, manifest: RunManifest) -> None:
    manifest.checks = [c.as_dict() for c in acceptance_suite(cfg.level, _grid(cfg), log=_log)]
    for c in manifest.checks:
        for key, value in c["measured"].items():
            if np.isscalar(value) and not isinstance(value, bool):
                manifest.constants[f"check{c['criterion']}_{key}"] = value


RUNNERS = {
    "kernels": run_kernels,
    "evolve": run_evolve,
    "modes": run_modes,
    "phi": run_phi,
    "phi-k": run_phi_k,
    "mc": run_mc,
    "r2-pairing": run_r2_pairing,
    "check": run_check,
}


def _log(line: str) -> None:
    print(line, file=sys.stderr, flush=True)


def acceptance_suite(level: str = "smoke", grid=None, log=None):
    """Run every acceptance criterion of the level; failures are recorded, not raised."""
    from .acceptance import run_checks

    return run_checks(level, grid, log)


def run(cfg: ExperimentConfig) -> RunManifest:
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(asdict(cfg), __version__)
    start = time.perf_counter()
    RUNNERS[cfg.command](cfg, out, manifest)
    manifest.wall_clock_seconds = time.perf_counter() - start
    manifest.outputs.append("manifest.json")
    atomic_write_text(out / "manifest.json", manifest.to_json() + "\n")
    return manifest


FLAG_HELP = {
    "n_theta": "theta nodes (even, >= 4)",
    "n_s": "flight-time nodes",
    "s_max": "largest flight time on the grid",
    "n_h": "impact-parameter nodes",
    "T": "time horizon",
    "dt": "time step",
    "init": "initial datum: equilibrium, cosine or custom-file",
    "init_file": "binary field dump used by init = custom-file",
    "norms": "comma list of norm orders among 1, 2, inf",
    "times": "comma list of report times (default: geometric up to T)",
    "k_list": "wave vectors as 'kx,ky;kx,ky'",
    "sigma": "width of the Gaussian test function",
    "hermite_nodes": "Gauss-Hermite nodes per wave-vector axis",
    "n_particles": "Monte Carlo ensemble size",
    "seed": "random seed",
    "snapshot_times": "comma list of Monte Carlo snapshot times",
    "hp_probes": "number of probe impact parameters h'",
    "c_max": "largest c in the contraction scan",
    "c_points": "number of c values in the scan",
    "order": "highest iterated-kernel order",
    "level": "acceptance level: smoke or full",
    "out_dir": f"output directory (default ${OUT_DIR_ENV} or ./runs)",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lorentz-kinetics", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value file; flags override it")
        for f in fields(ExperimentConfig):
            if f.name == "command":
                continue
            flag = "--" + f.name.replace("_", "-")
            conv = {"int": int, "float": float}.get(f.type, str)
            p.add_argument(flag, dest=f.name, type=conv, default=None, help=FLAG_HELP.get(f.name))
        if name == "evolve":
            p.add_argument("--grid", help="n_theta,n_s,n_h")
            p.add_argument("--smax", dest="s_max", type=float, default=None)
            p.add_argument("--out", dest="out_dir", default=None)
        if name == "modes":
            p.add_argument("--out", dest="out_dir", default=None)
        if name in ("phi-k",):
            p.add_argument("--k", dest="k_list", default=None, help="one wave vector 'kx,ky'")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    cfg.command = args.command
    for f in fields(ExperimentConfig):
        value = getattr(args, f.name, None)
        if f.name != "command" and value is not None:
            setattr(cfg, f.name, value)
    if getattr(args, "grid", None):
        parts = [int(v) for v in args.grid.split(",")]
        if len(parts) != 3:
            raise ConfigError("--grid expects n_theta,n_s,n_h")
        cfg.n_theta, cfg.n_s, cfg.n_h = parts
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        manifest = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps({"out_dir": cfg.out_dir, "passed": manifest.passed, "outputs": manifest.outputs}))
    return 0 if manifest.passed else 1


if __name__ == "__main__":
    sys.exit(main())
