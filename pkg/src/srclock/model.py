"""Physical configuration: constants, Zeeman sub-ensembles, drive stages,
initial states and the integration grid.

Everything is expressed in a frame rotating at the cavity reference frequency,
so stored frequencies are detunings in rad/s.  The absolute clock frequency
only enters fractional normalisation of Allan deviations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Union

import numpy as np

from .errors import ConfigError
from .state import CumulantState

TWO_PI = 2.0 * math.pi

#: Nuclear spin of the 87Sr clock states.
F_SR87 = 4.5
#: Linear Zeeman shift of the pi transitions per unit m_F, Hz per gauss.
ZEEMAN_HZ_PER_GAUSS = 108.4
#: 87Sr 1S0 - 3P0 clock frequency, Hz.
CLOCK_FREQUENCY_HZ = 429.5e12


@dataclass(frozen=True)
class PhysicalParams:
    """Cavity, coupling, decay and detection constants (angular units)."""

    kappa1: float
    kappa2: float
    g0: float
    gamma0: float
    eta: float
    delta_het: float
    omega_a_abs: float = TWO_PI * CLOCK_FREQUENCY_HZ
    detuning_cavity: float = 0.0

    def __post_init__(self):
        for name in ("kappa1", "kappa2", "g0", "gamma0", "eta", "delta_het",
                     "omega_a_abs", "detuning_cavity"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite", key=name)
        if self.kappa1 < 0 or self.kappa2 < 0:
            raise ConfigError("mirror loss rates must be non-negative", key="kappa1")
        if self.kappa <= 0:
            raise ConfigError("total cavity loss kappa must be positive", key="kappa1")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError(f"eta={self.eta} outside [0, 1]", key="eta")
        if self.omega_a_abs <= 0:
            raise ConfigError("omega_a_abs must be positive", key="omega_a_abs")
        if self.gamma0 < 0:
            raise ConfigError("gamma0 must be non-negative", key="gamma0")
        if self.delta_het < 0:
            # the one-sided spectrum maps lab frequency f to f - offset
            raise ConfigError("heterodyne offset must be non-negative", key="delta_het")

    @property
    def kappa(self) -> float:
        return self.kappa1 + self.kappa2

    @classmethod
    def from_hz(cls, kappa1_hz=72.5e3, kappa2_hz=72.5e3, g0_hz=2.41, gamma0_hz=1e-3,
                eta=0.12, heterodyne_offset_hz=1e3, clock_frequency_hz=CLOCK_FREQUENCY_HZ,
                cavity_detuning_hz=0.0):
        """Build from ordinary frequencies; every rate is multiplied by 2*pi."""
        return cls(
            kappa1=TWO_PI * kappa1_hz,
            kappa2=TWO_PI * kappa2_hz,
            g0=TWO_PI * g0_hz,
            gamma0=TWO_PI * gamma0_hz,
            eta=eta,
            delta_het=TWO_PI * heterodyne_offset_hz,
            omega_a_abs=TWO_PI * clock_frequency_hz,
            detuning_cavity=TWO_PI * cavity_detuning_hz,
        )

    def steady_state_photons(self, omega_m: float) -> float:
        """Empty-cavity photon number under a resonant drive of strength omega_m."""
        return (2.0 * math.sqrt(self.kappa1) * omega_m / self.kappa) ** 2


@dataclass(frozen=True)
class EnsembleSpec:
    m_F: float
    n_atoms: float
    detuning: float
    coupling: float
    gamma: float

    def __post_init__(self):
        if not self.n_atoms >= 0:
            raise ConfigError(f"n_atoms={self.n_atoms} must be >= 0", key="n_atoms")

    @property
    def label(self) -> str:
        """Channel-safe label, e.g. ``p9_2`` for m_F=+9/2."""
        fr = Fraction(self.m_F).limit_denominator(8)
        sign = "m" if fr < 0 else "p"
        num, den = abs(fr.numerator), fr.denominator
        return f"{sign}{num}" if den == 1 else f"{sign}{num}_{den}"


def zeeman_splitting(b_gauss: float) -> float:
    """Zeeman shift per unit m_F in rad/s for a field of ``b_gauss``."""
    if not b_gauss >= 0:
        raise ConfigError(f"magnetic field must be >= 0 G, got {b_gauss}", key="b_field_gauss")
    return TWO_PI * ZEEMAN_HZ_PER_GAUSS * b_gauss


def coupling_for(m_F: float, g0: float, F: float = F_SR87) -> float:
    return g0 * m_F / math.sqrt(F * (F + 1.0))


def _is_half_integer(x: float) -> bool:
    return abs(2.0 * x - round(2.0 * x)) < 1e-12


def build_ensembles(F: float, B: float, occupied, n_total: float, params: PhysicalParams,
                    *, delta_b: float | None = None, atom_detuning: float = 0.0):
    """Split ``n_total`` atoms evenly over the occupied pi transitions.

    ``delta_b`` (rad/s per unit m_F) overrides the field-derived splitting;
    ``atom_detuning`` is omega_a - omega_ref.
    """
    occupied = [float(x) for x in occupied]
    if not occupied:
        raise ConfigError("at least one m_F must be occupied", key="occupied")
    if len(set(occupied)) != len(occupied):
        raise ConfigError(f"duplicate m_F in {occupied}", key="occupied")
    if not _is_half_integer(F) or F <= 0:
        raise ConfigError(f"F={F} must be a positive half-integer", key="F")
    for mf in occupied:
        if abs(mf) > F or abs((F - mf) - round(F - mf)) > 1e-12:
            raise ConfigError(f"m_F={mf} not allowed for F={F}", key="occupied")
    if not n_total > 0:
        raise ConfigError(f"n_total={n_total} must be positive", key="n_total")
    split = zeeman_splitting(B) if delta_b is None else float(delta_b)
    per = n_total / len(occupied)
    out = []
    for mf in occupied:
        out.append(EnsembleSpec(
            m_F=mf,
            n_atoms=per,
            detuning=atom_detuning + split * mf,
            coupling=coupling_for(mf, params.g0, F),
            gamma=params.gamma0,
        ))
    # even split can leave a rounding residue; park it on the last ensemble
    resid = n_total - math.fsum(e.n_atoms for e in out)
    if resid:
        last = out[-1]
        out[-1] = EnsembleSpec(last.m_F, last.n_atoms + resid, last.detuning,
                               last.coupling, last.gamma)
    return out


@dataclass(frozen=True)
class DriveStage:
    """Square cavity drive.  ``omega_m`` is angular (2*pi times the quoted value);
    ``phase`` multiplies the drive amplitude by exp(i*phase)."""

    duration: float
    omega_m: float
    detuning_drive: float = 0.0
    envelope: str = "square"
    detect: bool = False
    phase: float = 0.0

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigError("stage duration must be positive", key="duration_s")
        if not self.omega_m >= 0:
            raise ConfigError("drive strength must be >= 0", key="omega_m_hz")
        if not math.isfinite(self.phase):
            raise ConfigError("drive phase must be finite", key="phase_rad")
        if self.envelope != "square":
            raise ConfigError(f"unsupported envelope {self.envelope!r}", key="envelope")

    def amplitude(self, t_local: float) -> float:
        return self.omega_m

    @property
    def coefficient(self) -> complex:
        """conj(Omega): the factor the moment equations carry."""
        return self.omega_m * complex(math.cos(self.phase), -math.sin(self.phase))


@dataclass(frozen=True)
class EmitStage:
    duration: float
    detect: bool = True

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigError("stage duration must be positive", key="duration_s")


Stage = Union[DriveStage, EmitStage]


@dataclass(frozen=True)
class StageSchedule:
    stages: tuple

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))

    @property
    def detection_active(self) -> tuple:
        return tuple(st.detect for st in self.stages)

    @property
    def total_duration(self) -> float:
        return math.fsum(st.duration for st in self.stages)

    def step_counts(self, dt: float) -> list[int]:
        """Steps per stage; raises if a boundary is not a multiple of dt."""
        counts = []
        for k, st in enumerate(self.stages):
            q = st.duration / dt
            n = int(round(q))
            if n < 1 or abs(q - n) > 1e-6 * max(1.0, q):
                raise ConfigError(
                    f"stage {k} duration {st.duration} s is not a multiple of dt={dt}",
                    key=f"schedule[{k}].duration_s",
                )
            counts.append(n)
        return counts

    def boundaries(self) -> list[float]:
        out, t = [0.0], 0.0
        for st in self.stages:
            t += st.duration
            out.append(t)
        return out


@dataclass(frozen=True)
class InitialStateSpec:
    """Initial atomic state.

    ``mode`` is ``ground``, ``angle`` (uniform ``theta`` with optional
    per-ensemble overrides keyed by m_F) or ``explicit`` (per-ensemble single
    atom moments ``s`` and ``z``; pairs factorise).

    With ``dipole_phase="coupling"`` the angle modes flip the sign of
    ``<s->`` on ensembles with negative coupling, so that every initial
    dipole radiates into the cavity in phase; ``"uniform"`` prepares the
    identical single-atom state everywhere (for +/-m_F pairs the two dipoles
    then cancel in the field equation).
    """

    mode: str = "ground"
    theta: float = math.pi
    theta_per_ensemble: dict = field(default_factory=dict)
    s: tuple | None = None
    z: tuple | None = None
    dipole_phase: str = "uniform"

    def __post_init__(self):
        if self.mode not in ("ground", "angle", "explicit"):
            raise ConfigError(f"unknown initial mode {self.mode!r}", key="initial.mode")
        thetas = [self.theta, *self.theta_per_ensemble.values()]
        for th in thetas:
            if not 0.0 <= th <= math.pi:
                raise ConfigError(f"theta={th} outside [0, pi]", key="initial.theta")
        if self.dipole_phase not in ("uniform", "coupling"):
            raise ConfigError(f"unknown dipole_phase {self.dipole_phase!r}",
                              key="initial.dipole_phase")
        if self.mode == "explicit" and (self.s is None or self.z is None):
            raise ConfigError("explicit initial state needs s and z", key="initial")


def initial_moments(spec: InitialStateSpec, ensembles) -> CumulantState:
    """Product-state moments for the requested initial state; cavity in vacuum."""
    m = len(ensembles)
    if spec.mode == "explicit":
        s = np.asarray(spec.s, dtype=np.complex128)
        z = np.asarray(spec.z, dtype=float)
        if s.shape != (m,) or z.shape != (m,):
            raise ConfigError(f"explicit s/z must have length {m}", key="initial")
    else:
        thetas = []
        for e in ensembles:
            th = math.pi if spec.mode == "ground" else spec.theta
            th = spec.theta_per_ensemble.get(e.m_F, th)
            if not 0.0 <= th <= math.pi:
                raise ConfigError(f"theta={th} outside [0, pi]", key="initial.theta")
            thetas.append(th)
        thetas = np.asarray(thetas)
        z = np.cos(thetas)
        s = (0.5 * np.sin(thetas)).astype(np.complex128)
        if spec.mode == "ground":
            z = -np.ones(m)
            s = np.zeros(m, dtype=np.complex128)
        elif spec.dipole_phase == "coupling":
            s = s * np.array([-1.0 if e.coupling < 0 else 1.0 for e in ensembles])
    st = CumulantState.zeros(m)
    st.set_vec("s", s)
    st.set_vec("z", z)
    st.set_mat("sp", np.outer(s, s.conj()))
    st.set_mat("sm", np.outer(s, s))
    st.set_mat("sz", np.outer(s, z))
    st.set_mat("zz", np.outer(z, z))
    return st


@dataclass(frozen=True)
class SimulationGrid:
    dt: float = 1e-7
    sample_dt: float = 2e-5
    seed: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt must be positive", key="grid.dt_s")
        k = self.sample_dt / self.dt
        if round(k) < 1 or abs(k - round(k)) > 1e-6 * k:
            raise ConfigError("sample_dt must be an integer multiple of dt", key="grid.sample_dt_s")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must fit in 64 bits", key="grid.seed")

    @property
    def steps_per_sample(self) -> int:
        return int(round(self.sample_dt / self.dt))

    def check_stability(self, params: PhysicalParams, ensembles) -> None:
        """Reject grids whose step is too coarse for the fastest rate."""
        rates = [params.kappa, abs(params.delta_het), abs(params.detuning_cavity)]
        rates += [abs(e.detuning) for e in ensembles]
        fastest = max(rates)
        if self.dt * fastest >= 0.1:
            raise ConfigError(
                f"dt={self.dt:g} s too coarse: dt*max_rate={self.dt * fastest:.3g} >= 0.1",
                key="grid.dt_s",
            )
