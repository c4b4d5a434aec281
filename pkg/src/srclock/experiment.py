"""Batches, sweeps and atom loss/injection on top of the trajectory engine.

A batch runs ``n_trajectories`` independent trajectories whose seeds are
derived from one master seed, turns each photocurrent record into a
(center, half-difference) frequency pair and computes Allan statistics of
the resulting sequences.  Results depend only on the configuration and the
master seed: work is farmed out per index and collected back in index order.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from . import analysis as A
from . import engine
from .config import BatchSpec, LossInjectionSpec, SimulationConfig, SweepSpec, from_dict
from .detection import RNG_ALGORITHM, derive_seed
from .errors import (ConfigError, FitError, InsufficientDataError, IntegrationDiverged,
                     PairingError, SrclockError)

__all__ = [
    "BatchSpec", "LossInjectionSpec", "SweepSpec", "BatchError", "SpectrumAnalysis",
    "TrajectoryResult", "BatchResult", "SweepPoint", "analyze_record", "run_trajectory",
    "run_batch", "apply_loss_injection", "run_sweep", "write_batch", "write_sweep",
    "MAX_FAILURE_FRACTION",
]

MAX_FAILURE_FRACTION = 0.2
SCHEMA_VERSION = 1


class BatchError(SrclockError, RuntimeError):
    """Too many trajectories of a batch failed."""


# --- single record -----------------------------------------------------------

@dataclass
class SpectrumAnalysis:
    psd: A.Periodogram
    peaks: list
    rejected: int
    center: float | None = None
    half_diff: float | None = None
    pairs: list = field(default_factory=list)
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.center is not None

    def as_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "window": self.psd.window,
            "span_s": self.psd.span,
            "df_hz": self.psd.df,
            "peaks": [p.as_dict() for p in self.peaks],
            "rejected_fits": self.rejected,
            "center_hz": self.center,
            "half_diff_hz": self.half_diff,
            "pairs": [{"f_plus_hz": p.f0, "f_minus_hz": q.f0,
                       "center_hz": 0.5 * (p.f0 + q.f0), "half_diff_hz": 0.5 * (p.f0 - q.f0)}
                      for p, q in self.pairs],
            "error": self.error,
        }


def analyze_record(record, config: SimulationConfig) -> SpectrumAnalysis:
    """Spectrum, fitted peaks and the (center, half-difference) of the main pair.

    The window defaults to the detected part of the run.  The main pair is
    the strongest fitted line on each side of zero; every +/- pair is also
    matched by closest |f| and reported in ``pairs``.
    """
    an = config.analysis
    t0 = config.emission_start if an.t_start is None else an.t_start
    psd = A.periodogram(record, an.window, t0, an.t_end)
    bins = A.find_peaks(psd, an.min_prominence_ratio, an.max_peaks, an.band)
    peaks = A.fit_peaks(psd, bins, an.half_window_bins)
    out = SpectrumAnalysis(psd, peaks, len(bins) - len(peaks))
    out.pairs = A.pair_peaks(peaks)

    def strength(p):
        return p.amplitude

    pos = [p for p in peaks if p.f0 > 0]
    neg = [p for p in peaks if p.f0 < 0]
    try:
        if not pos or not neg:
            raise PairingError(f"{len(pos)} positive and {len(neg)} negative peaks")
        out.center, out.half_diff = A.pair_statistics([max(pos, key=strength),
                                                       max(neg, key=strength)])
    except PairingError as exc:
        out.error = str(exc)
    return out


@dataclass
class TrajectoryResult:
    index: int
    seed: int
    center: float | None = None
    half_diff: float | None = None
    peaks: list = field(default_factory=list)
    rejected_fits: int = 0
    error: str = ""
    record: object = None

    @property
    def ok(self) -> bool:
        return self.center is not None


def run_trajectory(config: SimulationConfig, index: int, seed: int,
                   keep_record: bool = False) -> TrajectoryResult:
    """Integrate and analyse one trajectory; failures are captured, not raised."""
    res = TrajectoryResult(index, seed)
    try:
        rec = engine.integrate(config, seed=seed)
        if keep_record:
            res.record = rec
        spec = analyze_record(rec, config)
    except IntegrationDiverged as exc:
        res.error = f"diverged: {exc}"
        return res
    except (InsufficientDataError, FitError) as exc:
        res.error = f"analysis: {exc}"
        return res
    res.peaks = [p.as_dict() for p in spec.peaks]
    res.rejected_fits = spec.rejected
    if spec.ok:
        res.center, res.half_diff = spec.center, spec.half_diff
    else:
        res.error = f"pairing: {spec.error}"
    return res


# --- batches -------------------------------------------------------------------

@dataclass
class BatchResult:
    config_hash: str
    master_seed: int
    T_c: float
    results: list
    omega_a_abs: float
    m_list: tuple
    groups: int
    allan_center: A.AllanSeries | None = None
    allan_diff: A.AllanSeries | None = None
    fit_center: A.AllanFit | None = None
    fit_diff: A.AllanFit | None = None
    notes: list = field(default_factory=list)

    @property
    def seeds(self) -> list[int]:
        return [r.seed for r in self.results]

    @property
    def centers(self) -> np.ndarray:
        return np.array([r.center for r in self.results if r.ok])

    @property
    def half_diffs(self) -> np.ndarray:
        return np.array([r.half_diff for r in self.results if r.ok])

    @property
    def n_failed(self) -> int:
        return sum(not r.ok for r in self.results)

    @property
    def rejected_fits(self) -> int:
        return sum(r.rejected_fits for r in self.results)

    def reaccount(self, T_c_new: float) -> tuple:
        """(series, fit) of the center frequency attributed to cycle time ``T_c_new``."""
        if self.allan_center is None:
            raise InsufficientDataError("batch has no Allan series")
        s = A.reaccount(self.allan_center, self.T_c, T_c_new)
        return s, A.fit_allan_slope(s)

    def summary(self) -> dict:
        def fit(f):
            return None if f is None else {"c": f.c, "log_residual": f.residual}

        return {
            "schema_version": SCHEMA_VERSION,
            "config_hash": self.config_hash,
            "rng": RNG_ALGORITHM,
            "master_seed": self.master_seed,
            "seeds": self.seeds,
            "T_c_s": self.T_c,
            "n_trajectories": len(self.results),
            "n_failed": self.n_failed,
            "rejected_fits": self.rejected_fits,
            "failures": {str(r.index): r.error for r in self.results if not r.ok},
            "center_mean_hz": _mean(self.centers),
            "center_std_hz": _std(self.centers),
            "half_diff_mean_hz": _mean(self.half_diffs),
            "half_diff_std_hz": _std(self.half_diffs),
            "allan_fit_center": fit(self.fit_center),
            "allan_fit_half_diff": fit(self.fit_diff),
            "notes": list(self.notes),
        }


def _mean(x):
    return float(np.mean(x)) if len(x) else None


def _std(x):
    return float(np.std(x, ddof=1)) if len(x) > 1 else None


def _allan_with_groups(freqs, T_c, omega_abs, m_list, groups):
    """Allan series of the whole sequence; error bars from ``groups`` contiguous parts."""
    series = A.allan_deviation(freqs, T_c, omega_abs, m_list)
    if groups > 1:
        parts = np.array_split(np.asarray(freqs), groups)
        try:
            per = np.array([A.allan_deviation(p, T_c, omega_abs, m_list).sigmas for p in parts])
            gstd = per.std(axis=0, ddof=1)
        except InsufficientDataError:
            gstd = np.full(len(series), np.nan)
        series = dataclasses.replace(series, group_std=gstd)
    return series


def _worker(args):
    raw, index, seed, keep = args
    return run_trajectory(from_dict(raw), index, seed, keep)


def _check_batch(config, batch):
    span = config.schedule.total_duration
    if batch.T_c < span * (1 - 1e-12):
        raise ConfigError(f"T_c={batch.T_c:g} s is shorter than the simulated span {span:g} s",
                          key="batch.T_c_s")


def run_batch(config: SimulationConfig, batch: BatchSpec | None = None, *,
              workers: int | None = None, progress=None) -> BatchResult:
    """Run a batch of trajectories and compute Allan statistics.

    ``batch`` defaults to ``config.batch``; ``workers`` overrides its worker
    count.  ``progress(done, total)`` is called as results arrive.  Raises
    :class:`BatchError` when more than 20 % of the trajectories fail.
    """
    batch = config.batch if batch is None else batch
    _check_batch(config, batch)
    nw = batch.workers if workers is None else int(workers)
    n = batch.n_trajectories
    seeds = [derive_seed(batch.master_seed, i) for i in range(n)]
    jobs = [(config.raw, i, s, batch.keep_records) for i, s in enumerate(seeds)]

    results = [None] * n
    if nw <= 1 or n == 1:
        for k, job in enumerate(jobs):
            results[k] = run_trajectory(config, job[1], job[2], job[3])
            if progress:
                progress(k + 1, n)
    else:
        with ProcessPoolExecutor(max_workers=nw) as pool:
            for k, res in enumerate(pool.map(_worker, jobs)):
                results[res.index] = res
                if progress:
                    progress(k + 1, n)

    out = BatchResult(config.content_hash(), batch.master_seed, batch.T_c, results,
                      config.params.omega_a_abs, tuple(batch.m_list), batch.groups)
    if out.n_failed > MAX_FAILURE_FRACTION * n:
        raise BatchError(f"{out.n_failed} of {n} trajectories failed; first: "
                         + next(r.error for r in results if not r.ok))
    for name, seq in (("center", out.centers), ("diff", out.half_diffs)):
        try:
            series = _allan_with_groups(list(seq), batch.T_c, out.omega_a_abs,
                                        batch.m_list, batch.groups)
            setattr(out, f"allan_{name}", series)
            setattr(out, f"fit_{name}", A.fit_allan_slope(series))
        except (InsufficientDataError, FitError) as exc:
            out.notes.append(f"allan {name}: {exc}")
    return out


# --- atom loss and injection --------------------------------------------------------

def apply_loss_injection(state, ensembles, spec: LossInjectionSpec, dt: float):
    """One step of dN/dt = -gamma_los N + lambda_inj with moment relaxation.

    Returns ``(ensembles, state)`` as new objects.  An ensemble whose atom
    number reaches zero without injection keeps N = 0, which switches off all
    of its coupling terms.
    """
    if not (math.isfinite(dt) and dt >= 0):
        raise ValueError(f"dt={dt} must be finite and >= 0")
    new = state.copy()
    m = len(ensembles)
    nat = np.array([e.n_atoms for e in ensembles], dtype=float)
    if spec.active:
        gl, lam, zi = spec.arrays(m)
        K.loss_injection(new.y, m, nat, gl, lam, zi, dt)
        K.symmetrize(new.y, m)
    ens = [dataclasses.replace(e, n_atoms=float(n)) for e, n in zip(ensembles, nat)]
    return ens, new


# --- parameter sweeps ------------------------------------------------------------------

@dataclass
class SweepPoint:
    value: float
    peak_n: float = math.nan
    t_peak: float = math.nan
    fwhm: float = math.nan
    span98: float = math.nan
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


def _sweep_overrides(variable, value):
    if variable == "theta":
        return {"initial": {"mode": "angle", "theta": float(value)}, "monitored": False}
    return {"atoms": {"b_field_gauss": float(value), "splitting_hz_per_mf": None},
            "monitored": False}


def run_sweep(config: SimulationConfig, sweep: SweepSpec | None = None,
              progress=None) -> list[SweepPoint]:
    """One unmonitored trajectory per sweep value, summarised by its n(t) envelope.

    ``theta`` sets a uniform initial polar angle (0 = fully excited);
    ``B_field`` sets the field in gauss and derives the splitting from it.
    """
    sweep = config.sweep if sweep is None else sweep
    if not sweep.values:
        raise ConfigError("sweep.values is empty", key="sweep.values")
    out = []
    for k, v in enumerate(sweep.values):
        pt = SweepPoint(float(v))
        try:
            cfg = config.with_overrides(_sweep_overrides(sweep.variable, v))
            rec = engine.integrate(cfg)
            s = A.pulse_summary(rec.times, rec.channels["n"], cfg.drive_end)
            pt.peak_n, pt.t_peak, pt.fwhm, pt.span98 = s.peak_n, s.t_peak, s.fwhm, s.span98
        except (ConfigError, IntegrationDiverged, InsufficientDataError) as exc:
            pt.error = f"{type(exc).__name__}: {exc}"
        out.append(pt)
        if progress:
            progress(k + 1, len(sweep.values))
    return out


# --- output files ----------------------------------------------------------------------

def _fmt(x):
    return "" if x is None else repr(float(x))


def write_batch(result: BatchResult, outdir, config: SimulationConfig | None = None) -> dict:
    """Write frequencies.csv, allan.csv and summary.json; returns the summary."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "frequencies.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "seed", "center_hz", "half_diff_hz", "fit_ok"])
        for r in result.results:
            w.writerow([r.index, r.seed, _fmt(r.center), _fmt(r.half_diff), int(r.ok)])
    with open(outdir / "allan.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["series", "tau_s", "sigma", "n", "group_std"])
        for name, s in (("center", result.allan_center), ("half_diff", result.allan_diff)):
            if s is None:
                continue
            gs = s.group_std if s.group_std is not None else [None] * len(s)
            for tau, sig, nb, g in zip(s.taus, s.sigmas, s.n_samples, gs):
                w.writerow([name, _fmt(tau), _fmt(sig), int(nb), _fmt(g)])
    summary = result.summary()
    if config is not None:
        summary["config"] = config.to_dict()
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def write_sweep(points, variable: str, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variable", "value", "peak_n", "t_peak_s", "fwhm_s", "span98_s", "error"])
        for p in points:
            w.writerow([variable, _fmt(p.value), _fmt(p.peak_n), _fmt(p.t_peak), _fmt(p.fwhm),
                        _fmt(p.span98), p.error])
