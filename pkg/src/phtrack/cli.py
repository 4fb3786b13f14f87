"""Batch entry point: certification, feasibility, simulation and gain sweeps.

Settings come from a preset, optionally refined by a TOML config file, with
command-line flags taking precedence over both. The full resolved
configuration is embedded in every output file.

Exit codes: 0 success, 1 check failed, 2 bad configuration,
3 numerical failure, 4 divergence (simulate).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import datetime
import io
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .catalog import LOUDSPEAKER_RE, PRESETS, PresetBundle, get_preset
from .certification import DEFAULT_EPSILONS, DomainBox, certify
from .controller import ControllerGains
from .errors import DivergenceError, PhTrackError
from .simulation import SimulationResult, run_tracking_experiment, write_summary_json
from .trajectory import Sinusoid, check_feasibility, write_reference_csv

log = logging.getLogger("phtrack")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC, EXIT_DIVERGED = 0, 1, 2, 3, 4
OUT_ENV = "PHTRACK_OUT_DIR"
DEFAULT_OUT = "phtrack-out"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    preset: str = ""
    params: dict = field(default_factory=dict)
    signal: dict = field(default_factory=dict)
    gains: dict = field(default_factory=dict)
    reference: Optional[str] = None
    L_s: Optional[float] = None
    Re_variant: Optional[str] = None
    branch: int = 1
    eta0: object = None
    t_final: Optional[float] = None
    step: Optional[float] = None
    sample_dt: float = 1e-3
    domain: dict = field(default_factory=dict)
    qbox: Optional[list] = None
    epsilon_grid: list = field(default_factory=lambda: [float(e) for e in DEFAULT_EPSILONS])
    margin: float = 0.05
    error_threshold: float = 1e-3
    feasibility_tol: float = 1e-6
    feasibility_samples: int = 1001
    sweep: dict = field(default_factory=dict)
    jobs: int = 1
    out: Optional[str] = None


TABLES = {
    "params": None,
    "signal": {"offset", "amplitude", "omega", "phase"},
    "gains": {"Rbar_e", "K_c"},
    "domain": {"lower", "upper", "grid_points"},
    "sweep": {"Rbar_e", "K_c", "jobs"},
}
SCALARS = {"preset", "reference", "L_s", "Re_variant", "branch", "eta0", "t_final", "step", "sample_dt",
           "qbox", "epsilon_grid", "margin", "error_threshold", "feasibility_tol",
           "feasibility_samples", "jobs", "out"}


def load_config_file(path) -> dict:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    unknown = set(raw) - SCALARS - set(TABLES)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for name, allowed in TABLES.items():
        if name in raw:
            if not isinstance(raw[name], dict):
                raise ConfigError(f"[{name}] must be a table")
            if allowed is not None and set(raw[name]) - allowed:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(set(raw[name]) - allowed)}")
    return raw


def _positive(name, v):
    try:
        v = float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number") from None
    if not (math.isfinite(v) and v > 0):
        raise ConfigError(f"{name} must be positive and finite")
    return v


def _preset_defaults(name: str) -> dict:
    # Names of the numeric parameters a preset accepts as overrides.
    return {"stepper": {"M", "R_m", "R_s", "k_m", "k_D", "tau_L", "N_r", "L_s", "Rbar_e", "K_c"},
            "microphone": {"M", "R_m", "R_e", "k", "gamma1", "Rbar_e", "K_c"},
            "loudspeaker": {"M", "R_m", "R_e", "k", "alpha", "Rbar_e", "K_c"}}[name]


def validate(cfg: RunConfig, command: str) -> RunConfig:
    """Check every field before any computation starts."""
    if cfg.preset not in PRESETS:
        raise ConfigError(f"preset must be one of {sorted(PRESETS)}, got {cfg.preset!r}")
    bad = set(cfg.params) - _preset_defaults(cfg.preset)
    if bad:
        raise ConfigError(f"unknown parameters for {cfg.preset}: {sorted(bad)}")
    if cfg.reference is not None and cfg.reference not in ("paper", "solver"):
        raise ConfigError("reference must be 'paper' or 'solver'")
    if cfg.preset == "stepper" and cfg.reference == "solver":
        raise ConfigError("the stepper only has the closed-form reference")
    if cfg.L_s is not None:
        if cfg.preset != "stepper":
            raise ConfigError("L_s only applies to the stepper preset")
        cfg.L_s = _positive("L_s", cfg.L_s)
    if cfg.Re_variant is not None:
        if cfg.preset != "loudspeaker":
            raise ConfigError("Re_variant only applies to the loudspeaker preset")
        if cfg.Re_variant not in LOUDSPEAKER_RE:
            raise ConfigError(f"Re_variant must be one of {sorted(LOUDSPEAKER_RE)}")
    if cfg.branch not in (1, -1):
        raise ConfigError("branch must be 1 or -1")
    if isinstance(cfg.eta0, str) and cfg.eta0 != "on-reference":
        raise ConfigError("eta0 must be a list of numbers or 'on-reference'")
    if isinstance(cfg.eta0, (list, tuple)):
        try:
            cfg.eta0 = [float(v) for v in cfg.eta0]
        except (TypeError, ValueError):
            raise ConfigError("eta0 entries must be numbers") from None
    for name in ("t_final", "step"):
        if getattr(cfg, name) is not None:
            setattr(cfg, name, _positive(name, getattr(cfg, name)))
    for name in ("sample_dt", "margin", "error_threshold", "feasibility_tol"):
        setattr(cfg, name, _positive(name, getattr(cfg, name)))
    if cfg.qbox is not None:
        if len(cfg.qbox) != 2:
            raise ConfigError("qbox needs exactly two values LO HI")
        cfg.qbox = [float(v) for v in cfg.qbox]
        if not cfg.qbox[0] < cfg.qbox[1]:
            raise ConfigError("qbox needs LO < HI")
    try:
        cfg.epsilon_grid = [_positive("epsilon", e) for e in cfg.epsilon_grid]
    except TypeError:
        raise ConfigError("epsilon_grid must be a list of numbers") from None
    if not cfg.epsilon_grid:
        raise ConfigError("epsilon_grid must not be empty")
    if int(cfg.feasibility_samples) < 2:
        raise ConfigError("feasibility_samples must be at least 2")
    cfg.feasibility_samples = int(cfg.feasibility_samples)
    cfg.jobs = int(cfg.sweep.get("jobs", cfg.jobs))
    if cfg.jobs < 1:
        raise ConfigError("jobs must be at least 1")
    if command == "sweep":
        for key in ("Rbar_e", "K_c"):
            vals = cfg.sweep.get(key)
            if not vals or not isinstance(vals, list):
                raise ConfigError(f"sweep needs a nonempty list for {key}")
    return cfg


def _gain_value(v):
    if isinstance(v, (list, tuple)):
        return [_gain_value(x) for x in v]
    return _positive("gain", v)


def build_bundle(cfg: RunConfig, gains: Optional[dict] = None) -> PresetBundle:
    kw = dict(cfg.params)
    g = dict(cfg.gains if gains is None else gains)
    for key in ("Rbar_e", "K_c"):
        if key in g:
            kw[key] = _gain_value(g[key])
    if cfg.signal:
        base = {"stepper": (0.0, 0.5), "microphone": (0.3, 0.2), "loudspeaker": (-1.0, 0.3)}[cfg.preset]
        kw["signal"] = Sinusoid(float(cfg.signal.get("offset", base[0])),
                                float(cfg.signal.get("amplitude", base[1])),
                                float(cfg.signal.get("omega", 1.0)), float(cfg.signal.get("phase", 0.0)))
    if cfg.preset == "stepper":
        if cfg.L_s is not None:
            kw["L_s"] = cfg.L_s
    else:
        kw["branch"] = cfg.branch
        if cfg.reference is not None:
            kw["reference"] = cfg.reference
        if cfg.Re_variant is not None:
            kw["Re_variant"] = cfg.Re_variant
    try:
        return get_preset(cfg.preset, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def resolve_domain(cfg: RunConfig, bundle: PresetBundle) -> DomainBox:
    box = bundle.domain
    if cfg.domain:
        lo = cfg.domain.get("lower", box.lower)
        hi = cfg.domain.get("upper", box.upper)
        try:
            box = DomainBox(lo, hi, int(cfg.domain.get("grid_points", box.grid_points)))
        except ValueError as exc:
            raise ConfigError(f"domain: {exc}") from None
    if cfg.qbox is not None:
        for i in range(bundle.system.n_m):
            box = box.with_axis(i, *cfg.qbox)
    return box


def resolve_eta0(cfg: RunConfig, bundle: PresetBundle) -> np.ndarray:
    if cfg.eta0 is None:
        return np.array(bundle.eta0, dtype=float)
    if cfg.eta0 == "on-reference":
        return bundle.reference.state(0.0)
    eta0 = np.array(cfg.eta0, dtype=float)
    if eta0.shape != (bundle.system.dim,):
        raise ConfigError(f"eta0 needs {bundle.system.dim} entries for {cfg.preset}")
    return eta0


def resolved(cfg: RunConfig, bundle: PresetBundle, command: str) -> dict:
    """Configuration after defaults, as embedded in the outputs (no wall-clock data)."""
    d = asdict(cfg)
    d.pop("out")
    d["command"] = command
    d["t_final"] = cfg.t_final if cfg.t_final is not None else bundle.t_final
    d["step"] = cfg.step if cfg.step is not None else bundle.step
    d["eta0_resolved"] = resolve_eta0(cfg, bundle).tolist()
    d["gains_resolved"] = bundle.gains.to_dict()
    d["domain_resolved"] = resolve_domain(cfg, bundle).to_dict()
    d["preset_params"] = _jsonable(bundle.params)
    d["version"] = __version__
    return d


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def config_line(config: dict) -> str:
    return "config=" + json.dumps(config, sort_keys=True, separators=(",", ":"))


def _metadata() -> dict:
    now = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    return {"created": now, "version": __version__}


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _report_json(path: Path, payload: dict) -> None:
    write_summary_json(path, _jsonable(payload))


def _warn(bundle: PresetBundle) -> None:
    for w in bundle.warnings:
        log.warning("%s: %s", bundle.name, w)
    for note in bundle.reference.notes:
        log.warning("%s reference: %s", bundle.name, note)


def cmd_certify(cfg: RunConfig) -> int:
    bundle = build_bundle(cfg)
    domain = resolve_domain(cfg, bundle)
    config = resolved(cfg, bundle, "certify")
    _warn(bundle)
    rep = certify(bundle.system, bundle.gains, domain, cfg.epsilon_grid, cfg.margin)
    out = _out_dir(cfg) / f"certify_{bundle.name}.json"
    _report_json(out, {"config": config, "report": rep.to_dict(), "warnings": bundle.warnings,
                       "notes": bundle.notes, "metadata": _metadata()})
    print(f"certify {bundle.name}: overall_ok={rep.overall_ok} assumption1_ok={rep.assumption1_ok} "
          f"beta1={rep.beta1} beta2={rep.beta2} passing_eps={len(rep.passing_epsilons)} -> {out}")
    if rep.errors and rep.beta1 is None and rep.assumption1_ok is None:
        return EXIT_NUMERIC
    return EXIT_OK if rep.overall_ok else EXIT_FAIL


def _partial_result(bundle: PresetBundle, exc: DivergenceError) -> SimulationResult:
    from .controller import ClosedLoop

    t, ys = exc.partial
    loop = ClosedLoop(bundle.system, bundle.gains, bundle.reference)
    with np.errstate(all="ignore"):
        u = np.array([loop.control(y, ti) for y, ti in zip(ys, t)])
    return SimulationResult(t, ys, bundle.reference.states(t), u, bundle.system.n_m, bundle.system.n_e,
                            diagnostics={"diverged_after": exc.last_time})


def cmd_simulate(cfg: RunConfig) -> int:
    bundle = build_bundle(cfg)
    config = resolved(cfg, bundle, "simulate")
    eta0 = np.array(config["eta0_resolved"])
    _warn(bundle)
    out_dir = _out_dir(cfg)
    csv_path = out_dir / f"simulate_{bundle.name}.csv"
    json_path = out_dir / f"simulate_{bundle.name}.json"
    header = config_line(config)
    try:
        res = run_tracking_experiment(bundle.system, bundle.gains, bundle.reference, eta0,
                                      (0.0, config["t_final"]), config["step"], cfg.sample_dt)
    except DivergenceError as exc:
        part = _partial_result(bundle, exc)
        part.write_csv(csv_path, header)
        _report_json(json_path, {"config": config, "status": "diverged", "last_time": exc.last_time,
                                 "message": str(exc), "metadata": _metadata()})
        print(f"simulate {bundle.name}: diverged after t={exc.last_time:.6g} -> {csv_path}")
        return EXIT_DIVERGED
    res.write_csv(csv_path, header)
    ok = res.final_error <= cfg.error_threshold
    _report_json(json_path, {"config": config, "status": "completed", "ok": ok,
                             "error_threshold": cfg.error_threshold, "summary": res.summary(),
                             "warnings": bundle.warnings, "notes": bundle.notes, "metadata": _metadata()})
    rate = res.fitted_rate
    print(f"simulate {bundle.name}: final_error={res.final_error:.6g} "
          f"rate={'n/a' if rate is None else f'{rate:.6g}'} ok={ok} -> {csv_path}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_feasibility(cfg: RunConfig) -> int:
    bundle = build_bundle(cfg)
    config = resolved(cfg, bundle, "feasibility")
    _warn(bundle)
    ts = np.linspace(0.0, config["t_final"], cfg.feasibility_samples)
    rep = check_feasibility(bundle.system, bundle.reference, ts, cfg.feasibility_tol)
    out_dir = _out_dir(cfg)
    write_reference_csv(out_dir / f"reference_{bundle.name}.csv", bundle.system, bundle.reference, ts,
                        header=config_line(config))
    out = out_dir / f"feasibility_{bundle.name}.json"
    _report_json(out, {"config": config, "report": rep.to_dict(), "warnings": bundle.warnings,
                       "metadata": _metadata()})
    print(f"feasibility {bundle.name}: max_r_q={rep.max_r_q:.3g} max_r_p={rep.max_r_p:.3g} ok={rep.ok} -> {out}")
    return EXIT_OK if rep.ok else EXIT_FAIL


SWEEP_COLUMNS = ["index", "Rbar_e", "K_c", "overall_ok", "assumption1_ok", "beta1", "beta2",
                 "final_error", "rate", "fit_residual", "sim_ok", "error"]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (list, tuple)):
        return " ".join(_fmt(x) for x in v)
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _sweep_point(cfg: RunConfig, index: int, rb, kc) -> dict:
    row = dict.fromkeys(SWEEP_COLUMNS)
    row.update(index=index, Rbar_e=rb, K_c=kc, sim_ok=False)
    errors = []
    try:
        bundle = build_bundle(cfg, {"Rbar_e": rb, "K_c": kc})
    except (ConfigError, PhTrackError, ValueError) as exc:
        row["error"] = f"setup: {exc}"
        return row
    rep = certify(bundle.system, bundle.gains, resolve_domain(cfg, bundle), cfg.epsilon_grid, cfg.margin)
    row.update(overall_ok=rep.overall_ok, assumption1_ok=rep.assumption1_ok, beta1=rep.beta1, beta2=rep.beta2)
    errors += [f"certify: {e}" for e in rep.errors]
    if not rep.overall_ok:
        errors.append("certification failed")
    t_final = cfg.t_final if cfg.t_final is not None else bundle.t_final
    step = cfg.step if cfg.step is not None else bundle.step
    try:
        res = run_tracking_experiment(bundle.system, bundle.gains, bundle.reference, resolve_eta0(cfg, bundle),
                                      (0.0, t_final), step, cfg.sample_dt)
        row["final_error"] = res.final_error
        if res.fit is not None:
            row["rate"], row["fit_residual"] = res.fit.rate, res.fit.residual
        row["sim_ok"] = res.final_error <= cfg.error_threshold
    except (PhTrackError, ValueError, np.linalg.LinAlgError) as exc:
        errors.append(f"simulate: {exc}")
    row["error"] = "; ".join(errors) or None
    return row


def cmd_sweep(cfg: RunConfig) -> int:
    points = [(rb, kc) for rb in cfg.sweep["Rbar_e"] for kc in cfg.sweep["K_c"]]
    bundle = build_bundle(cfg)
    config = resolved(cfg, bundle, "sweep")
    if cfg.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
            futures = [ex.submit(_sweep_point, cfg, i, rb, kc) for i, (rb, kc) in enumerate(points)]
            rows = [f.result() for f in futures]
    else:
        rows = [_sweep_point(cfg, i, rb, kc) for i, (rb, kc) in enumerate(points)]
    out_dir = _out_dir(cfg)
    path = out_dir / f"sweep_{bundle.name}.csv"
    buf = io.StringIO()
    buf.write(f"# {config_line(config)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in SWEEP_COLUMNS])
    path.write_text(buf.getvalue())
    _report_json(out_dir / f"sweep_{bundle.name}.json",
                 {"config": config, "rows": rows, "metadata": _metadata()})
    n_ok = sum(bool(r["sim_ok"]) for r in rows)
    print(f"sweep {bundle.name}: {len(rows)} points, {n_ok} within threshold -> {path}")
    return EXIT_OK if n_ok else EXIT_FAIL


COMMANDS = {"certify": cmd_certify, "simulate": cmd_simulate, "feasibility": cmd_feasibility, "sweep": cmd_sweep}


def _eta0_arg(values):
    if len(values) == 1 and values[0] == "on-reference":
        return "on-reference"
    return values


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--preset", choices=sorted(PRESETS))
    common.add_argument("--config", help="TOML file; command-line flags override its values")
    common.add_argument("--tmax", type=float, dest="t_final")
    common.add_argument("--step", type=float)
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    common.add_argument("--qbox", type=float, nargs=2, metavar=("LO", "HI"),
                        help="restrict the q axes of the certification domain")
    common.add_argument("--epsilon-grid", type=float, nargs="+", dest="epsilon_grid")
    common.add_argument("--reference", choices=["paper", "solver"])
    common.add_argument("--Ls", type=float, dest="L_s")
    common.add_argument("--Re-variant", choices=sorted(LOUDSPEAKER_RE), dest="Re_variant")
    common.add_argument("--branch", type=int, choices=[1, -1])
    common.add_argument("--eta0", nargs="+", help="initial state values, or 'on-reference'")
    common.add_argument("--rbar", type=float, nargs="+", help="Rbar_e (scalar or diagonal)")
    common.add_argument("--kc", type=float, nargs="+", help="K_c (scalar or diagonal)")
    common.add_argument("--error-threshold", type=float, dest="error_threshold")
    common.add_argument("--tol", type=float, dest="feasibility_tol", help="feasibility residual tolerance")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="phtrack", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("certify", parents=[common], help="check the contraction conditions on a domain box")
    sub.add_parser("simulate", parents=[common], help="closed-loop tracking run")
    sub.add_parser("feasibility", parents=[common], help="mechanical residuals of the reference")
    sw = sub.add_parser("sweep", parents=[common], help="certify and simulate over a gain grid")
    sw.add_argument("--rbar-grid", type=float, nargs="+", dest="rbar_grid")
    sw.add_argument("--kc-grid", type=float, nargs="+", dest="kc_grid")
    sw.add_argument("--jobs", type=int)
    return parser


def config_from_args(args) -> RunConfig:
    raw = load_config_file(args.config) if args.config else {}
    cfg = RunConfig(**{k: v for k, v in raw.items() if k != "sweep"})
    cfg.sweep = dict(raw.get("sweep", {}))
    for name in ("preset", "t_final", "step", "out", "qbox", "epsilon_grid", "reference", "L_s", "Re_variant",
                 "branch", "error_threshold", "feasibility_tol"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    if args.eta0 is not None:
        cfg.eta0 = _eta0_arg(args.eta0)
    for flag, key in (("rbar", "Rbar_e"), ("kc", "K_c")):
        v = getattr(args, flag)
        if v is not None:
            cfg.gains = {**cfg.gains, key: v[0] if len(v) == 1 else v}
    if getattr(args, "rbar_grid", None):
        cfg.sweep["Rbar_e"] = args.rbar_grid
    if getattr(args, "kc_grid", None):
        cfg.sweep["K_c"] = args.kc_grid
    if getattr(args, "jobs", None) is not None:
        cfg.sweep["jobs"] = args.jobs
    if not cfg.preset:
        raise ConfigError("no preset given (use --preset or 'preset' in the config file)")
    return validate(cfg, args.command)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"phtrack: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PhTrackError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"phtrack: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
