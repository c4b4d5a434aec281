"""Run configuration: strict YAML/JSON schema, resolution into model objects,
and a content hash over the fully resolved document.

Unknown keys anywhere in the document are rejected with a
:class:`~srclock.errors.ConfigError` naming the dotted key path.  All
frequencies in the file are ordinary frequencies (Hz); the resolved objects
hold angular rates.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .model import (
    CLOCK_FREQUENCY_HZ,
    F_SR87,
    TWO_PI,
    DriveStage,
    EmitStage,
    InitialStateSpec,
    PhysicalParams,
    SimulationGrid,
    StageSchedule,
    build_ensembles,
)

SCHEMA_VERSION = 1

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "name": "custom",
    "physics": {
        "kappa1_hz": 72.5e3,
        "kappa2_hz": 72.5e3,
        "g0_hz": 2.41,
        "gamma0_hz": 1e-3,
        "eta": 0.12,
        "heterodyne_offset_hz": 1e3,
        "clock_frequency_hz": CLOCK_FREQUENCY_HZ,
        "cavity_detuning_hz": 0.0,
    },
    "atoms": {
        "F": F_SR87,
        "b_field_gauss": 0.0,
        "splitting_hz_per_mf": None,
        "atom_detuning_hz": 0.0,
        "occupied": [4.5, -4.5],
        "n_total": 1.8e5,
    },
    "initial": {
        "mode": "ground",
        "theta": math.pi,
        "theta_per_mf": {},
        "dipole_phase": "uniform",
        "s": None,
        "z": None,
    },
    "schedule": [],
    "grid": {"dt_s": 1e-7, "sample_dt_s": 2e-5, "seed": 0},
    "monitored": True,
    "loss_injection": {"gamma_los_hz": 0.0, "lambda_inj_hz": 0.0, "injected_state": "excited"},
    "analysis": {
        "window": "rectangular",
        "t_start_s": None,
        "t_end_s": None,
        "min_prominence_ratio": 30.0,
        "max_peaks": 10,
        "half_window_bins": 6,
        "band_hz": [-990.0, 990.0],
    },
    "batch": {
        "n_trajectories": 120,
        "master_seed": 0,
        "T_c_s": 1.1,
        "groups": 3,
        "workers": 1,
        "m_list": [1, 2, 4, 8],
        "keep_records": False,
    },
    "sweep": {"variable": "theta", "values": []},
}

_STAGE_KEYS = {
    "drive": {"kind", "duration_s", "omega_m", "detuning_hz", "phase_rad", "envelope", "detect"},
    "emit": {"kind", "duration_s", "detect"},
}


def _merge(base, over, path=""):
    """Overlay ``over`` onto ``base``, rejecting keys that ``base`` lacks."""
    if not isinstance(over, dict):
        raise ConfigError(f"section {path or '<root>'} must be a mapping", key=path or "<root>")
    out = copy.deepcopy(base)
    for k, v in over.items():
        key = f"{path}.{k}" if path else str(k)
        if k not in base:
            raise ConfigError(f"unknown key {key!r}", key=key)
        # free-form mappings / lists are replaced, nested sections merged
        if isinstance(base[k], dict) and base[k] and k != "theta_per_mf":
            out[k] = _merge(base[k], v if v is not None else {}, key)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _num(section, key, path, *, positive=False, nonneg=False, allow_none=False):
    v = section[key]
    full = f"{path}.{key}"
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{full} must be a number, got {v!r}", key=full)
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(f"{full} must be finite", key=full)
    if positive and not v > 0:
        raise ConfigError(f"{full} must be > 0", key=full)
    if nonneg and v < 0:
        raise ConfigError(f"{full} must be >= 0", key=full)
    return v


@dataclass(frozen=True)
class LossInjectionSpec:
    """Atom loss rate (1/s) and total injection rate (atoms/s, split evenly)."""

    gamma_los: float = 0.0
    lambda_inj: float = 0.0
    injected_state: str = "excited"

    def __post_init__(self):
        if not (self.gamma_los >= 0 and math.isfinite(self.gamma_los)):
            raise ConfigError("gamma_los must be finite and >= 0", key="loss_injection.gamma_los_hz")
        if not (self.lambda_inj >= 0 and math.isfinite(self.lambda_inj)):
            raise ConfigError("lambda_inj must be finite and >= 0", key="loss_injection.lambda_inj_hz")
        if self.injected_state not in ("excited", "ground"):
            raise ConfigError(f"injected_state {self.injected_state!r}",
                              key="loss_injection.injected_state")

    @property
    def active(self) -> bool:
        return self.gamma_los > 0 or self.lambda_inj > 0

    @property
    def z_injected(self) -> float:
        return 1.0 if self.injected_state == "excited" else -1.0

    def steady_state(self) -> float:
        """Total steady-state atom number lambda/gamma (inf without loss)."""
        return self.lambda_inj / self.gamma_los if self.gamma_los > 0 else math.inf

    def arrays(self, m: int):
        gl = np.full(m, self.gamma_los)
        lam = np.full(m, self.lambda_inj / m)
        zi = np.full(m, self.z_injected)
        return gl, lam, zi


@dataclass(frozen=True)
class AnalysisSettings:
    window: str = "rectangular"
    t_start: float | None = None
    t_end: float | None = None
    min_prominence_ratio: float = 30.0
    max_peaks: int = 10
    half_window_bins: int = 6
    band: tuple = (-990.0, 990.0)


@dataclass(frozen=True)
class BatchSpec:
    n_trajectories: int = 120
    master_seed: int = 0
    T_c: float = 1.1
    groups: int = 3
    workers: int = 1
    m_list: tuple = (1, 2, 4, 8)
    keep_records: bool = False

    def __post_init__(self):
        if self.n_trajectories < 1:
            raise ConfigError("n_trajectories must be >= 1", key="batch.n_trajectories")
        if not self.T_c > 0:
            raise ConfigError("T_c must be positive", key="batch.T_c_s")
        if self.groups < 1:
            raise ConfigError("groups must be >= 1", key="batch.groups")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1", key="batch.workers")
        if not self.m_list or any(int(m) < 1 for m in self.m_list):
            raise ConfigError("m_list entries must be >= 1", key="batch.m_list")


@dataclass(frozen=True)
class SweepSpec:
    variable: str = "theta"
    values: tuple = ()

    def __post_init__(self):
        if self.variable not in ("theta", "B_field"):
            raise ConfigError(f"sweep variable {self.variable!r}", key="sweep.variable")


@dataclass
class SimulationConfig:
    """Resolved configuration plus the raw document it came from."""

    raw: dict
    params: PhysicalParams
    ensembles: list
    schedule: StageSchedule
    initial: InitialStateSpec
    grid: SimulationGrid
    monitored: bool
    loss_injection: LossInjectionSpec
    analysis: AnalysisSettings
    batch: BatchSpec
    sweep: SweepSpec
    name: str = "custom"
    _hash: str | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def content_hash(self) -> str:
        if self._hash is None:
            canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
            self._hash = hashlib.sha256(canon.encode()).hexdigest()
        return self._hash

    def with_overrides(self, overrides: dict) -> "SimulationConfig":
        """New config from the raw document with ``overrides`` merged in."""
        return from_dict(_merge(self.raw, overrides))

    @property
    def emission_start(self) -> float:
        """Start of the first detected stage (s)."""
        t = 0.0
        for st in self.schedule.stages:
            if st.detect:
                return t
            t += st.duration
        return t

    @property
    def drive_end(self) -> float:
        t, end = 0.0, 0.0
        for st in self.schedule.stages:
            t += st.duration
            if isinstance(st, DriveStage):
                end = t
        return end


def _stage(entry, k):
    path = f"schedule[{k}]"
    if not isinstance(entry, dict) or entry.get("kind") not in _STAGE_KEYS:
        raise ConfigError(f"{path} needs kind drive|emit", key=f"{path}.kind")
    kind = entry["kind"]
    extra = set(entry) - _STAGE_KEYS[kind]
    if extra:
        bad = sorted(extra)[0]
        raise ConfigError(f"unknown key {path}.{bad}", key=f"{path}.{bad}")
    if "duration_s" not in entry:
        raise ConfigError(f"{path} missing duration_s", key=f"{path}.duration_s")
    dur = _num(entry, "duration_s", path, positive=True)
    if kind == "drive":
        om = _num({"omega_m": entry.get("omega_m", 0.0)}, "omega_m", path, nonneg=True)
        det = _num({"detuning_hz": entry.get("detuning_hz", 0.0)}, "detuning_hz", path)
        ph = _num({"phase_rad": entry.get("phase_rad", 0.0)}, "phase_rad", path)
        return DriveStage(dur, TWO_PI * om, TWO_PI * det, entry.get("envelope", "square"),
                          bool(entry.get("detect", False)), ph)
    return EmitStage(dur, bool(entry.get("detect", True)))


def _band(value):
    try:
        lo, hi = (float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError("analysis.band_hz must be [low, high]", key="analysis.band_hz") from None
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise ConfigError("analysis.band_hz must be finite with low < high",
                          key="analysis.band_hz")
    return (lo, hi)


def from_dict(data: dict) -> SimulationConfig:
    """Validate and resolve a configuration mapping (defaults filled in)."""
    raw = _merge(DEFAULTS, data or {})
    ph = raw["physics"]
    for k in ph:
        _num(ph, k, "physics")
    try:
        params = PhysicalParams.from_hz(
            kappa1_hz=ph["kappa1_hz"], kappa2_hz=ph["kappa2_hz"], g0_hz=ph["g0_hz"],
            gamma0_hz=ph["gamma0_hz"], eta=ph["eta"],
            heterodyne_offset_hz=ph["heterodyne_offset_hz"],
            clock_frequency_hz=ph["clock_frequency_hz"],
            cavity_detuning_hz=ph["cavity_detuning_hz"],
        )
    except ConfigError as exc:
        raise ConfigError(str(exc), key=f"physics.{exc.key}") from None

    at = raw["atoms"]
    F = _num(at, "F", "atoms", positive=True)
    B = _num(at, "b_field_gauss", "atoms", nonneg=True)
    split = _num(at, "splitting_hz_per_mf", "atoms", allow_none=True)
    det0 = _num(at, "atom_detuning_hz", "atoms")
    n_total = _num(at, "n_total", "atoms", positive=True)
    occ = at["occupied"]
    if not isinstance(occ, list):
        raise ConfigError("atoms.occupied must be a list", key="atoms.occupied")
    try:
        ensembles = build_ensembles(
            F, B, occ, n_total, params,
            delta_b=None if split is None else TWO_PI * split,
            atom_detuning=TWO_PI * det0,
        )
    except ConfigError as exc:
        raise ConfigError(str(exc), key=f"atoms.{exc.key}") from None

    sched_raw = raw["schedule"]
    if not isinstance(sched_raw, list):
        raise ConfigError("schedule must be a list of stages", key="schedule")
    schedule = StageSchedule([_stage(e, k) for k, e in enumerate(sched_raw)])

    ini = raw["initial"]
    tpm = ini["theta_per_mf"] or {}
    if not isinstance(tpm, dict):
        raise ConfigError("initial.theta_per_mf must be a mapping", key="initial.theta_per_mf")
    s_val = None if ini["s"] is None else tuple(complex(*v) if isinstance(v, list) else complex(v)
                                                for v in ini["s"])
    z_val = None if ini["z"] is None else tuple(float(v) for v in ini["z"])
    try:
        initial = InitialStateSpec(
            mode=ini["mode"], theta=float(ini["theta"]),
            theta_per_ensemble={float(k): float(v) for k, v in tpm.items()},
            s=s_val, z=z_val, dipole_phase=ini["dipole_phase"],
        )
    except ConfigError as exc:
        key = exc.key if (exc.key or "").startswith("initial") else "initial"
        raise ConfigError(str(exc), key=key) from None

    gr = raw["grid"]
    seed = gr["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("grid.seed must be an integer", key="grid.seed")
    grid = SimulationGrid(_num(gr, "dt_s", "grid", positive=True),
                          _num(gr, "sample_dt_s", "grid", positive=True), seed)
    grid.check_stability(params, ensembles)
    if schedule.stages:
        schedule.step_counts(grid.dt)

    li = raw["loss_injection"]
    loss = LossInjectionSpec(_num(li, "gamma_los_hz", "loss_injection"),
                             _num(li, "lambda_inj_hz", "loss_injection"),
                             li["injected_state"])

    an = raw["analysis"]
    if an["window"] not in ("rectangular", "hann"):
        raise ConfigError(f"analysis.window {an['window']!r}", key="analysis.window")
    analysis = AnalysisSettings(
        an["window"],
        _num(an, "t_start_s", "analysis", allow_none=True),
        _num(an, "t_end_s", "analysis", allow_none=True),
        _num(an, "min_prominence_ratio", "analysis", positive=True),
        int(an["max_peaks"]),
        int(an["half_window_bins"]),
        _band(an.get("band_hz")),
    )

    bt = raw["batch"]
    batch = BatchSpec(int(bt["n_trajectories"]), int(bt["master_seed"]),
                      _num(bt, "T_c_s", "batch", positive=True), int(bt["groups"]),
                      int(bt["workers"]), tuple(int(m) for m in bt["m_list"]),
                      bool(bt["keep_records"]))
    sw = raw["sweep"]
    sweep = SweepSpec(sw["variable"], tuple(float(v) for v in sw["values"]))

    if not isinstance(raw["monitored"], bool):
        raise ConfigError("monitored must be true or false", key="monitored")
    return SimulationConfig(raw, params, ensembles, schedule, initial, grid,
                            raw["monitored"], loss, analysis, batch, sweep, str(raw["name"]))


def load(path) -> SimulationConfig:
    """Read a YAML (or JSON) file and resolve it."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}", key="<file>") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: invalid YAML ({exc})", key="<file>") from None
    return from_dict(data or {})


def dump(data: dict) -> str:
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=None)
