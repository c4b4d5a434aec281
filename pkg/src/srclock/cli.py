"""``srclock`` command line.

Exit codes: 0 success, 1 other failure, 2 configuration error (the message
names the offending key), 3 numerical divergence (a snapshot is written to
``divergence.json`` in the output directory).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis as A
from . import config as C
from . import engine, experiment
from .detection import RNG_ALGORITHM, TrajectoryRecord
from .errors import ConfigError, IntegrationDiverged, SrclockError
from .model import DriveStage
from .presets import PRESETS, preset_dict

ENV_OUT = "SRCLOCK_OUTPUT_DIR"
DEFAULT_OUT = "srclock_out"


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--config", help="YAML/JSON configuration file")
    src.add_argument("--preset", choices=sorted(PRESETS), help="shipped configuration")
    common.add_argument("--out", help=f"output directory (default ${ENV_OUT} or ./{DEFAULT_OUT})")
    common.add_argument("--seed", type=int, help="trajectory seed (batch: master seed)")
    common.add_argument("--workers", type=int, help="worker processes for batches")

    p = argparse.ArgumentParser(prog="srclock", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version",
                   version=f"srclock {__version__} (rng {RNG_ALGORITHM})")
    p.add_argument("--dump-preset", metavar="NAME", choices=sorted(PRESETS),
                   help="print the fully resolved preset as YAML and exit")
    sub = p.add_subparsers(dest="command")
    sub.add_parser("simulate", parents=[common], help="one trajectory, full time series")
    sp = sub.add_parser("spectrum", parents=[common], help="PSD and Lorentzian fits")
    sp.add_argument("--input", help="existing record (.csv or .bin) instead of simulating")
    sub.add_parser("allan", parents=[common], help="batch of trajectories and Allan deviation")
    sub.add_parser("sweep", parents=[common], help="theta or B-field sweep (unmonitored)")
    sub.add_parser("oracle", parents=[common], help="closed-form reference values")
    return p


def _resolve(args) -> C.SimulationConfig:
    if args.config:
        cfg = C.load(args.config)
    elif args.preset:
        cfg = C.from_dict(C._merge(C.DEFAULTS, preset_dict(args.preset)))
    else:
        raise ConfigError("give --config or --preset", key="<config>")
    over = {}
    if args.seed is not None:
        over["grid"] = {"seed": args.seed}
        if args.command == "allan":
            over = {"batch": {"master_seed": args.seed}}
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1", key="batch.workers")
        over.setdefault("batch", {})["workers"] = args.workers
    return cfg.with_overrides(over) if over else cfg


def _outdir(args) -> Path:
    d = Path(args.out or os.environ.get(ENV_OUT) or DEFAULT_OUT)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _clean(x):
    # strict JSON: non-finite numbers become null
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_clean(data), indent=2, sort_keys=True, allow_nan=False) + "\n")


def _base_summary(cfg, command):
    return {"schema_version": experiment.SCHEMA_VERSION, "command": command,
            "version": __version__, "rng": RNG_ALGORITHM, "config_hash": cfg.content_hash(),
            "config": cfg.to_dict()}


def _peaks_line(spec) -> str:
    if not spec.peaks:
        return "no peaks"
    fs = ", ".join(f"{p.f0:+.2f} Hz (hwhm {p.hwhm:.2f})" for p in sorted(spec.peaks,
                                                                          key=lambda p: p.f0))
    tail = f"; center {spec.center:+.3f} Hz" if spec.ok else ""
    return f"peaks {fs}{tail}"


def _write_psd(path: Path, psd) -> None:
    arr = np.column_stack([psd.freqs, psd.power])
    np.savetxt(path, arr, delimiter=",", fmt="%.17g", header="freq_hz,power", comments="")


def cmd_simulate(cfg, out: Path) -> str:
    rec = engine.integrate(cfg)
    rec.write_csv(out / "trajectory.csv")
    summary = _base_summary(cfg, "simulate")
    summary["seed"] = cfg.grid.seed
    line = f"simulate {cfg.name} seed={cfg.grid.seed}: {len(rec)} samples"
    try:
        spec = experiment.analyze_record(rec, cfg)
        summary["spectrum"] = spec.as_dict()
        line += "; " + _peaks_line(spec)
    except SrclockError as exc:
        summary["spectrum"] = {"error": str(exc)}
        line += f"; no spectrum ({exc})"
    _write_json(out / "summary.json", summary)
    return line


def cmd_spectrum(cfg, out: Path, input_path=None) -> str:
    if input_path:
        p = Path(input_path)
        try:
            rec = (TrajectoryRecord.read_binary(p) if p.suffix == ".bin"
                   else TrajectoryRecord.read_csv(p))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read record {p}: {exc}", key="--input") from None
    else:
        rec = engine.integrate(cfg)
    spec = experiment.analyze_record(rec, cfg)
    _write_psd(out / "psd.csv", spec.psd)
    _write_json(out / "spectrum.json", spec.as_dict())
    summary = _base_summary(cfg, "spectrum")
    summary["seed"] = rec.meta.get("seed")
    summary["spectrum"] = spec.as_dict()
    _write_json(out / "summary.json", summary)
    return f"spectrum {cfg.name}: " + _peaks_line(spec)


def cmd_allan(cfg, out: Path) -> str:
    def progress(done, total):
        print(f"\r{done}/{total} trajectories", end="", file=sys.stderr, flush=True)

    res = experiment.run_batch(cfg, progress=progress)
    print(file=sys.stderr)
    summary = experiment.write_batch(res, out, cfg)
    summary.update({k: v for k, v in _base_summary(cfg, "allan").items() if k not in summary})
    _write_json(out / "summary.json", summary)
    fc = res.fit_center
    c = f"{fc.c:.3e}/sqrt(tau/s)" if fc else "n/a"
    return (f"allan {cfg.name}: {len(res.results)} trajectories, {res.n_failed} failed; "
            f"center c = {c} (T_c = {res.T_c:g} s)")


def cmd_sweep(cfg, out: Path) -> str:
    pts = experiment.run_sweep(cfg)
    experiment.write_sweep(pts, cfg.sweep.variable, out / "sweep.csv")
    summary = _base_summary(cfg, "sweep")
    summary["points"] = [vars(p) for p in pts]
    _write_json(out / "summary.json", summary)
    bad = sum(not p.ok for p in pts)
    return f"sweep {cfg.name} over {cfg.sweep.variable}: {len(pts)} points, {bad} failed"


def oracle_values(cfg) -> dict:
    """Driven photon number, Purcell rates and Rabi parameters for ``cfg``."""
    p = cfg.params
    F = float(cfg.raw["atoms"]["F"])
    drives = [st for st in cfg.schedule.stages if isinstance(st, DriveStage)]
    out = {"kappa_rad_s": p.kappa, "drives": [], "ensembles": []}
    for st in drives:
        n_ss = A.driven_photon_number(p.kappa1, p.kappa, st.omega_m)
        out["drives"].append({"omega_m_hz": st.omega_m / (2 * math.pi), "duration_s": st.duration,
                              "steady_state_n": n_ss})
    a_cav = math.sqrt(out["drives"][0]["steady_state_n"]) if drives else 0.0
    T = drives[0].duration if drives else 0.0
    for e in cfg.ensembles:
        delta_b = e.detuning / e.m_F if e.m_F else 0.0
        pe, om0 = A.rabi_oracle(a_cav, p.g0, F, e.m_F, delta_b, T)
        out["ensembles"].append({
            "m_F": e.m_F, "detuning_hz": e.detuning / (2 * math.pi),
            "purcell_rate_per_s": A.purcell_rate(e.m_F, p.g0, F, delta_b, p.kappa),
            "rabi_omega0_rad_s": om0, "excited_after_drive": pe})
    return out


def cmd_oracle(cfg) -> str:
    vals = oracle_values(cfg)
    lines = []
    for d in vals["drives"]:
        lines.append(f"driven photon number (Omega_m = {d['omega_m_hz']:g} Hz): "
                     f"{d['steady_state_n']:.1f}")
    lines.append(f"{'m_F':>6} {'detuning_hz':>12} {'Gamma_1/s':>12} {'P_e(T)':>10}")
    for e in vals["ensembles"]:
        lines.append(f"{e['m_F']:>6.1f} {e['detuning_hz']:>12.2f} "
                     f"{e['purcell_rate_per_s']:>12.5g} {e['excited_after_drive']:>10.4f}")
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    try:
        if args.dump_preset:
            print(C.dump(C._merge(C.DEFAULTS, preset_dict(args.dump_preset))), end="")
            return 0
        if not args.command:
            parser.print_usage(sys.stderr)
            return 2
        cfg = _resolve(args)
        if args.command == "oracle":
            print(cmd_oracle(cfg))
            return 0
        out = _outdir(args)
        try:
            if args.command == "simulate":
                line = cmd_simulate(cfg, out)
            elif args.command == "spectrum":
                line = cmd_spectrum(cfg, out, args.input)
            elif args.command == "allan":
                line = cmd_allan(cfg, out)
            else:
                line = cmd_sweep(cfg, out)
        except IntegrationDiverged as exc:
            path = out / "divergence.json"
            _write_json(path, {"error": str(exc), "t": exc.t, "snapshot": exc.snapshot})
            print(f"error: {exc}; snapshot written to {path}", file=sys.stderr)
            return 3
        print(line)
        return 0
    except ConfigError as exc:
        print(f"config error [{exc.key}]: {exc}", file=sys.stderr)
        return 2
    except SrclockError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
