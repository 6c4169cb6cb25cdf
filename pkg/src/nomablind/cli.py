"""Command-line entry point: ``nomablind {sweep,optimize-theta,analyze,validate}``.

Settings come from an optional JSON config; command-line flags override it.
Exit status is 0 on success, 1 for configuration errors and 2 when a run
breaks an invariant.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import subprocess
import sys
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path

import numpy as np

from . import analysis, sim
from .channel import ChannelRealization
from .modset import CASE_ROWS, ModeTable, ModulationError, ModulationMode, case_table, make_table

SCHEMA_VERSION = 1
PRESETS = tuple(CASE_ROWS) + ("custom",)

CONFIG_KEYS = {
    "preset", "modes", "snr_db", "snr_min", "snr_max", "snr_step", "trials", "K", "classifiers",
    "phase_rule", "phase_weights", "thetas", "theta_snr", "seed", "role", "sic_policy",
    "capacity_samples", "block_size", "out",
}
MODE_KEYS = {"far_order", "near_order", "power_far", "power_near"}

CURVE_COLUMNS = [
    "schema_version", "snr_db", "classifier", "trials",
    "oma_noma_error", "oma_noma_lo", "oma_noma_hi",
    "classification_error", "classification_lo", "classification_hi",
    "nearfar_error", "nearfar_lo", "nearfar_hi", "nearfar_n",
    "mc_error", "mc_lo", "mc_hi", "mc_n",
    "frame_loss", "frame_loss_lo", "frame_loss_hi",
    "ser", "ser_lo", "ser_hi",
    "capacity", "capacity_ci", "capacity_vs_genie", "capacity_vs_genie_ci", "capacity_pq",
]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    config: sim.SimConfig
    out: Path
    preset: str
    settings: dict          # normalized settings, hashed into the manifest

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.settings, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _custom_table(modes) -> ModeTable:
    if not isinstance(modes, list) or len(modes) < 2:
        raise ConfigError("'modes' must list the OMA mode followed by at least one NOMA mode")
    rows = []
    for l, row in enumerate(modes):
        if not isinstance(row, dict):
            raise ConfigError(f"mode {l}: expected an object")
        extra = set(row) - MODE_KEYS
        if extra:
            raise ConfigError(f"mode {l}: unknown key(s) {sorted(extra)}")
        if "far_order" not in row:
            raise ConfigError(f"mode {l}: 'far_order' is required")
        pf = float(row.get("power_far", 1.0))
        pn = float(row.get("power_near", 0.0 if l == 0 else 1.0 - pf))
        # builds and validates the row, including the power-sum check
        ModulationMode(l, int(row["far_order"]), row.get("near_order"), pf, pn)
        rows.append((int(row["far_order"]), row.get("near_order"), pf))
    return make_table(rows, "custom")


def _snr_grid(s: dict) -> list[float]:
    if "snr_db" in s:
        grid = s["snr_db"]
        grid = [grid] if isinstance(grid, (int, float)) else grid
        return [float(x) for x in grid]
    lo, hi, step = float(s.get("snr_min", 0.0)), float(s.get("snr_max", 30.0)), float(s.get("snr_step", 1.0))
    if step <= 0 or hi < lo:
        raise ConfigError("SNR range needs snr_max >= snr_min and snr_step > 0")
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + i * step, 10) for i in range(n)]


def build_spec(settings: dict) -> ExperimentSpec:
    """Validate a settings dict (config file merged with flags) into an ExperimentSpec."""
    unknown = set(settings) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    s = {k: v for k, v in settings.items() if v is not None}
    preset = s.get("preset", "custom" if "modes" in s else "case1")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    try:
        if preset == "custom":
            if "modes" not in s:
                raise ConfigError("preset 'custom' needs a 'modes' list")
            table = _custom_table(s["modes"])
        else:
            if "modes" in s:
                raise ConfigError("'modes' is only allowed with preset 'custom'")
            table = case_table(preset)
        classifiers = s.get("classifiers", list(sim.CLASSIFIERS))
        if isinstance(classifiers, str):
            classifiers = [c.strip() for c in classifiers.split(",") if c.strip()]
        weights = s.get("phase_weights")
        if weights is not None:
            weights = {("oma" if k == "oma" else int(k)): float(v) for k, v in weights.items()}
        thetas = s.get("thetas")
        config = sim.SimConfig(
            table=table,
            snr_db=tuple(_snr_grid(s)),
            trials=int(s.get("trials", 100_000)),
            K=int(s.get("K", 10)),
            classifiers=tuple(classifiers),
            phase_rule=s.get("phase_rule", "uniform"),
            phase_weights=weights,
            thetas=thetas if thetas is None or isinstance(thetas, str) else tuple(thetas),
            theta_snr=float(s.get("theta_snr", 13.0)),
            seed=int(s.get("seed", 0)),
            role=s.get("role", "near"),
            sic_policy=s.get("sic_policy", analysis.MATCHED),
            capacity_samples=int(s.get("capacity_samples", 10_000)),
            block_size=int(s.get("block_size", 2048)),
        )
        if config.phase_rule == "nonuniform":
            sim.assign_nonuniform(table.with_thetas([0.0] * (table.L + 1)), weights)
    except ConfigError:
        raise
    except (ModulationError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    normalized = {
        "preset": preset,
        "modes": [[m.far_order, m.near_order, m.power_far, m.power_near] for m in table],
        "snr_db": list(config.snr_db), "trials": config.trials, "K": config.K,
        "classifiers": list(config.classifiers), "phase_rule": config.phase_rule,
        "phase_weights": None if weights is None else {str(k): v for k, v in weights.items()},
        "thetas": config.thetas if isinstance(config.thetas, (str, type(None))) else list(config.thetas),
        "theta_snr": config.theta_snr, "seed": config.seed, "role": config.role,
        "sic_policy": config.sic_policy, "capacity_samples": config.capacity_samples,
        "block_size": config.block_size,
    }
    return ExperimentSpec(config, Path(s.get("out", "results")), preset, normalized)


def load_config(path, overrides: dict | None = None) -> ExperimentSpec:
    """Read a JSON config file, apply ``overrides`` (non-None values win) and validate."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: top level must be an object")
    merged = dict(data)
    overrides = overrides or {}
    if any(overrides.get(k) is not None for k in ("snr_min", "snr_max", "snr_step")):
        merged.pop("snr_db", None)     # a range given on the command line replaces the list
    for k, v in overrides.items():
        if v is not None:
            merged[k] = v
    return build_spec(merged)


# ---------------------------------------------------------------- output


def version_string() -> str:
    try:
        base = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        base = "0+unknown"
    try:
        desc = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
                              capture_output=True, text=True, timeout=5)
        if desc.returncode == 0 and desc.stdout.strip():
            return f"{base}+g{desc.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return base


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.10g}"


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) if isinstance(x, (int, float, np.integer, np.floating)) else x for x in r])


def _curve_row(p: sim.CurvePoint):
    return [SCHEMA_VERSION, p.snr_db, p.classifier, p.trials,
            p.oma_noma_error.value, p.oma_noma_error.lo, p.oma_noma_error.hi,
            p.classification_error.value, p.classification_error.lo, p.classification_error.hi,
            p.nearfar_error.value, p.nearfar_error.lo, p.nearfar_error.hi, p.nearfar_error.n,
            p.mc_error.value, p.mc_error.lo, p.mc_error.hi, p.mc_error.n,
            p.frame_loss.value, p.frame_loss.lo, p.frame_loss.hi,
            p.ser.value, p.ser.lo, p.ser.hi,
            p.capacity.value, p.capacity.half_width, p.capacity_vs_genie.value,
            p.capacity_vs_genie.half_width, p.capacity_pq]


def write_sweep(result: sim.SweepResult, spec: ExperimentSpec, command: str) -> list[Path]:
    out = spec.out
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "curves.csv", out / "capacity.csv"]
    _write_csv(files[0], CURVE_COLUMNS, [_curve_row(p) for p in result.points])
    _write_csv(files[1], ["schema_version", "snr_db", "classifier", "capacity", "capacity_ci",
                          "capacity_vs_genie", "capacity_vs_genie_ci", "capacity_pq"],
               [[SCHEMA_VERSION, p.snr_db, p.classifier, p.capacity.value, p.capacity.half_width,
                 p.capacity_vs_genie.value, p.capacity_vs_genie.half_width, p.capacity_pq]
                for p in result.points])
    L = spec.config.table.L
    for snr in spec.config.snr_db:
        path = out / f"confusion_{_fmt(snr)}.csv"
        rows = []
        for p in result.points:
            if p.snr_db != snr:
                continue
            for l in range(L + 1):
                rows.append([SCHEMA_VERSION, p.classifier, l, *p.confusion[l].tolist()])
        _write_csv(path, ["schema_version", "classifier", "true_mode",
                          *[f"decided_{m}" for m in range(L + 1)]], rows)
        files.append(path)
    files.append(write_manifest(spec, command, {
        "thetas": list(result.setup.thetas),
        "pilot_rotations": list(result.setup.plan.phis),
    }, [f.name for f in files]))
    return files


def write_manifest(spec: ExperimentSpec, command: str, extra: dict, files) -> Path:
    spec.out.mkdir(parents=True, exist_ok=True)
    path = spec.out / "manifest.json"
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "version": version_string(),
        "seed": spec.config.seed,
        "config_hash": spec.config_hash,
        "config": spec.settings,
        **extra,
        "files": sorted(files),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------- commands


def cmd_sweep(spec: ExperimentSpec, args) -> int:
    cfg = spec.config

    def progress(snr, done):
        if args.verbose:
            print(f"  {snr:g} dB: {done}/{cfg.trials}", file=sys.stderr)

    result = sim.run_sweep(cfg, progress)
    if cfg.thetas == sim.OPTIMIZE:
        print(f"theta_0 = {result.setup.thetas[0]:.4f} rad (optimized at {cfg.theta_snr:g} dB)")
    write_sweep(result, spec, "sweep")
    for p in result.points:
        print(f"{p.snr_db:6.2f} dB  {p.classifier:6s}  oma/noma {p.oma_noma_error.value:.4g}  "
              f"near/far {p.nearfar_error.value:.4g}  mc {p.mc_error.value:.4g}  "
              f"frame loss {p.frame_loss.value:.4g}  capacity {p.capacity.value:.4f}")
    print(f"wrote {spec.out}")
    return 0


def cmd_optimize(spec: ExperimentSpec, args) -> int:
    cfg = spec.config
    snr = cfg.theta_snr if args.snr is None else args.snr
    search = analysis.optimize_theta(cfg.table, snr, step=args.step, trials=cfg.trials,
                                     seed=cfg.seed, K=cfg.K, sic_policy=cfg.sic_policy)
    print(f"theta_0 = {search.theta:.4f} rad  capacity = {search.objective:.6f} "
          f"+/- {search.ci:.6f} bit/s/Hz at {snr:g} dB")
    spec.out.mkdir(parents=True, exist_ok=True)
    path = spec.out / "theta_search.csv"
    _write_csv(path, ["schema_version", "theta", "capacity", "capacity_ci"],
               [[SCHEMA_VERSION, t, o, c] for t, o, c in zip(search.thetas, search.objectives, search.cis)])
    write_manifest(spec, "optimize-theta",
                   {"snr_db": snr, "grid_step": args.step, "theta_hat": search.theta,
                    "objective": search.objective}, [path.name])
    return 0


def cmd_analyze(spec: ExperimentSpec, args) -> int:
    cfg = spec.config
    table = cfg.table.with_thetas([0.0] * (cfg.table.L + 1))
    rows, cap_rows = [], []
    for snr in cfg.snr_db:
        chan = ChannelRealization(1.0, 10.0 ** (-snr / 10.0), 1.0)
        for l in range(1, table.L + 1):
            for m in range(1, table.L + 1):
                rows.append([SCHEMA_VERSION, snr, l, m,
                             analysis.sinr_misclassified(l, m, table, chan, cfg.sic_policy),
                             int(analysis.sinr_condition(l, m, table, chan, cfg.sic_policy)),
                             analysis.mc_error_prob(l, m, table, chan, exact=True),
                             analysis.mc_error_prob(l, m, table, chan, exact=False)])
        perfect = analysis.CapacityInputs(np.eye(table.L + 1), np.ones(table.L + 1))
        gain2 = sim.capacity_gain2(cfg.seed, snr, cfg.capacity_samples)
        cap_rows.append([SCHEMA_VERSION, snr,
                         analysis.capacity(table, perfect, snr, gain2=gain2, sic_policy=cfg.sic_policy)])
    spec.out.mkdir(parents=True, exist_ok=True)
    p1, p2 = spec.out / "sinr.csv", spec.out / "capacity_perfect.csv"
    _write_csv(p1, ["schema_version", "snr_db", "true_mode", "decided_mode", "sinr",
                    "sinr_condition", "pe_exact", "pe_dmin"], rows)
    _write_csv(p2, ["schema_version", "snr_db", "capacity"], cap_rows)
    write_manifest(spec, "analyze", {}, [p1.name, p2.name])
    for r in cap_rows:
        print(f"{r[1]:6.2f} dB  perfect-classification capacity {r[2]:.4f} bit/s/Hz")
    return 0


def run_validation(spec: ExperimentSpec) -> list[tuple[str, bool, str]]:
    """Fast structural checks on the configured table; returns (name, ok, detail)."""
    cfg = spec.config
    table = cfg.table.with_thetas([0.0] * (cfg.table.L + 1))
    out = []

    quiet = sim.SimConfig(cfg.table, (90.0,), trials=200, K=cfg.K, classifiers=sim.CLASSIFIERS,
                          phase_rule=cfg.phase_rule, phase_weights=cfg.phase_weights,
                          thetas=cfg.thetas if cfg.thetas != sim.OPTIMIZE else None, seed=cfg.seed)
    res = sim.run_sweep(quiet)
    errs = {p.classifier: p.oma_noma_error.k + p.nearfar_error.k + p.mc_error.k for p in res.points}
    out.append(("noiseless classification", all(v == 0 for v in errs.values()), str(errs)))

    bad = 0
    for s2 in (1.0, 0.1, 0.01, 0.001):
        chan = ChannelRealization(1.0, s2, 1.0)
        for l in range(1, table.L + 1):
            for m in range(1, table.L + 1):
                lhs = analysis.sinr_condition(l, m, table, chan, cfg.sic_policy)
                rhs = (analysis.sinr_correct(table[l], chan)
                       >= analysis.sinr_misclassified(l, m, table, chan, cfg.sic_policy))
                bad += lhs != rhs
    out.append(("sinr condition equivalence", bad == 0, f"{bad} counterexamples"))

    from .prc import classify_prc_batch, estimate_rotation

    plan = res.setup.plan
    prc_table = res.setup.prc
    pu = np.array([sim.superposed_pilot(m) for m in prc_table])
    phi = estimate_rotation(pu, pu * np.exp(1j * np.asarray(prc_table.phis)))
    err = float(np.max(np.abs(np.angle(np.exp(1j * (phi - np.asarray(prc_table.phis)))))))
    _, modes = classify_prc_batch(phi, plan, prc_table)
    ok = err < 1e-12 and np.array_equal(modes, np.arange(table.L + 1))
    out.append(("pilot rotation round trip", bool(ok), f"max error {err:.2e}"))
    return out


def cmd_validate(spec: ExperimentSpec, args) -> int:
    results = run_validation(spec)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return 0 if all(ok for _, ok, _ in results) else 2


# ---------------------------------------------------------------- argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # bad flags are configuration errors
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--preset", help=f"one of {', '.join(PRESETS)}")
    common.add_argument("--snr-min", type=float)
    common.add_argument("--snr-max", type=float)
    common.add_argument("--snr-step", type=float)
    common.add_argument("--trials", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--classifiers", help="comma-separated subset of mlc,prm,prc,genie,joint")
    common.add_argument("--phase-rule", choices=sim.PHASE_RULES)
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="nomablind", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sw = sub.add_parser("sweep", parents=[common], help="Monte Carlo sweep over SNR")
    sw.add_argument("--optimize-theta", action="store_true",
                    help="search theta_0 before sweeping (at --snr, default 13 dB)")
    sw.add_argument("--snr", type=float, help="SNR for the theta_0 search")
    op = sub.add_parser("optimize-theta", parents=[common], help="grid search of theta_0")
    op.add_argument("--snr", type=float, help="SNR of the search (default 13 dB)")
    op.add_argument("--step", type=float, default=0.01, help="grid resolution in rad")
    sub.add_parser("analyze", parents=[common], help="closed-form SINR and error tables")
    sub.add_parser("validate", parents=[common], help="run the invariant checks")
    return p


def _settings_from_args(args) -> dict:
    s = {
        "preset": args.preset, "snr_min": args.snr_min, "snr_max": args.snr_max,
        "snr_step": args.snr_step, "trials": args.trials, "seed": args.seed,
        "classifiers": args.classifiers, "phase_rule": args.phase_rule, "out": args.out,
    }
    if args.command == "sweep" and args.optimize_theta:
        s["thetas"] = sim.OPTIMIZE
        s["theta_snr"] = args.snr
    if args.command == "optimize-theta":
        s["theta_snr"] = args.snr
        if args.trials is None:
            s["trials"] = 10_000
    return s


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    overrides = _settings_from_args(args)
    try:
        if args.config:
            spec = load_config(args.config, overrides)
        else:
            spec = build_spec({k: v for k, v in overrides.items() if v is not None})
        handler = {"sweep": cmd_sweep, "optimize-theta": cmd_optimize,
                   "analyze": cmd_analyze, "validate": cmd_validate}[args.command]
        return handler(spec, args)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (sim.InvariantError, AssertionError) as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
