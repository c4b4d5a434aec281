"""Stochastic second-order mean-field integration.

The drift and measurement-backaction terms of every first and second moment
are evaluated by :func:`srclock._kernels.rhs`; third-order moments are
normal-ordered and closed with :func:`cumulant_close`.  Trajectories use a
fixed-step Euler-Maruyama scheme with one scalar Wiener increment per step
shared by all moments and by the photocurrent.
"""

from __future__ import annotations

import math

import numpy as np

from . import _kernels as K
from .detection import RNG_ALGORITHM, NoiseStream, TrajectoryRecord
from .errors import IntegrationDiverged
from .model import DriveStage
from .state import CumulantState, StateDerivative, layout_size

NOISE_CHUNK = 1 << 18


def cumulant_close(o, p, q, op, oq, pq):
    """<opq> from first and second moments (third cumulant set to zero)."""
    return o * pq + p * oq + q * op - 2 * o * p * q


def _ensemble_arrays(ensembles):
    g = np.array([e.coupling for e in ensembles], dtype=float)
    nat = np.array([e.n_atoms for e in ensembles], dtype=float)
    gam = np.array([e.gamma for e in ensembles], dtype=float)
    w = np.array([e.detuning - 0.5j * e.gamma for e in ensembles], dtype=np.complex128)
    return g, nat, gam, w


def _drive_of(stage):
    if isinstance(stage, DriveStage):
        return stage.coefficient, stage.detuning_drive
    return 0j, 0.0


def _evaluate(state, t, params, ensembles, stage, c_meas, with_diff):
    if ensembles is None:
        # backaction terms depend on the moments only
        g = nat = gam = np.zeros(state.m)
        w = np.zeros(state.m, dtype=np.complex128)
    else:
        g, nat, gam, w = _ensemble_arrays(ensembles)
    omega, det = _drive_of(stage) if stage is not None else (0j, 0.0)
    wc = params.detuning_cavity - 0.5j * params.kappa
    drive = math.sqrt(params.kappa1) * omega * np.exp(-1j * det * t)
    ph = np.exp(-1j * params.delta_het * t)
    dr = np.zeros_like(state.y)
    df = np.zeros_like(state.y)
    K.rhs(state.y, state.m, g, nat, w, gam, wc, params.kappa, drive, c_meas, ph, dr, df,
          with_diff)
    return dr, df


def _check_finite(state, t):
    if not np.all(np.isfinite(state.y)):
        raise IntegrationDiverged(t, snapshot=None)


def drift(state: CumulantState, t: float, params, ensembles, stage=None) -> StateDerivative:
    """Deterministic right-hand side at stage-local time ``t``."""
    _check_finite(state, t)
    dr, _ = _evaluate(state, t, params, ensembles, stage, 0.0, False)
    return StateDerivative(dr, state.m)


def diffusion(state: CumulantState, t: float, params, ensembles=None) -> StateDerivative:
    """Coefficient of dW for every moment (backaction of heterodyne detection)."""
    _check_finite(state, t)
    c = math.sqrt(params.eta * params.kappa2)
    _, df = _evaluate(state, t, params, ensembles, None, c, True)
    return StateDerivative(df, state.m)


SCHEMES = ("exponential", "cumulant", "moment")


def step(state: CumulantState, t: float, dt: float, dW: float, params, ensembles,
         stage=None, detect: bool = True, scheme: str = "exponential") -> CumulantState:
    """One Euler-Maruyama step; returns a new, re-symmetrised state.

    ``scheme="moment"`` is the plain update y + drift*dt + diffusion*dW.
    ``"cumulant"`` takes the same step in mean/covariance coordinates: with
    ~1e5 atoms the collective variance is an N^2-weighted difference of pair
    moments and the O(dt^2) product bias of the plain update drives it
    negative within milliseconds, after which the backaction runs away.
    ``"exponential"`` (used by :func:`integrate`) additionally integrates the
    diagonal detuning/decay part exactly.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    c = math.sqrt(params.eta * params.kappa2) if detect else 0.0
    noisy = detect and c > 0
    dr, df = _evaluate(state, t, params, ensembles, stage, c, noisy)
    rates, prop, phi = _propagator(state.m, params, ensembles, dt, scheme)
    out = state.copy()
    K.advance(out.y, out.m, dr, df, dt, float(dW), noisy, scheme != "moment", rates, prop, phi)
    K.symmetrize(out.y, out.m)
    if not np.all(np.isfinite(out.y)):
        raise IntegrationDiverged(t + dt, snapshot=state.as_dict())
    return out


def _phi1(z):
    """(exp(z) - 1) / z, with the series near zero."""
    z = np.asarray(z, dtype=np.complex128)
    out = np.ones_like(z)
    big = np.abs(z) > 1e-4
    out[big] = np.expm1(z[big]) / z[big]
    zs = z[~big]
    out[~big] = 1.0 + zs / 2.0 + zs * zs / 6.0
    return out


def _propagator(m, params, ensembles, dt, scheme):
    """(rates, exp(rates dt), phi1(rates dt)) for the chosen scheme."""
    size = layout_size(m)
    if scheme != "exponential":
        return (np.zeros(size, dtype=np.complex128), np.ones(size, dtype=np.complex128),
                np.ones(size, dtype=np.complex128))
    _, _, gam, w = _ensemble_arrays(ensembles)
    wc = params.detuning_cavity - 0.5j * params.kappa
    rates = K.linear_rates(m, w, gam, wc, params.kappa)
    return rates, np.exp(rates * dt), _phi1(rates * dt)


def _divergence_snapshot(t, stage, y, m, nat, rec, rec_idx, ensembles):
    names = channel_names(ensembles)
    last = {nm: float(v) for nm, v in zip(names, rec[rec_idx - 1])} if rec_idx else {}
    return {"t": t, "stage_index": stage, "n_atoms": nat.tolist(), "last_sample": last,
            "moments": CumulantState(y.copy(), m).as_dict()}


def channel_names(ensembles) -> list[str]:
    names = ["t", "J", "n", "re_a", "im_a"]
    for e in ensembles:
        lab = e.label
        names += [f"z_mF_{lab}", f"re_asp_mF_{lab}", f"im_asp_mF_{lab}", f"N_mF_{lab}"]
    return names


def integrate(config, seed: int | None = None, *, state: CumulantState | None = None,
              scheme: str = "exponential") -> TrajectoryRecord:
    """Run the full stage schedule of ``config`` and return the sampled record.

    ``config`` needs ``params``, ``ensembles``, ``schedule``, ``initial``,
    ``grid``, ``monitored`` and optionally ``loss_injection`` (see
    :class:`srclock.config.SimulationConfig`).  ``seed`` overrides
    ``config.grid.seed``; ``scheme`` is as for :func:`step`.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    from .model import initial_moments

    params = config.params
    ensembles = list(config.ensembles)
    grid = config.grid
    schedule = config.schedule
    seed = int(grid.seed if seed is None else seed)
    m = len(ensembles)
    grid.check_stability(params, ensembles)

    st = initial_moments(config.initial, ensembles) if state is None else state.copy()
    y = st.y
    g, nat, gam, w = _ensemble_arrays(ensembles)
    wc = params.detuning_cavity - 0.5j * params.kappa
    sqk1 = math.sqrt(params.kappa1)
    c_sig = math.sqrt(params.eta * params.kappa2)
    c_meas = c_sig if getattr(config, "monitored", True) else 0.0

    loss = getattr(config, "loss_injection", None)
    use_loss = loss is not None and loss.active
    if use_loss:
        gl, lam, zi = loss.arrays(m)
    else:
        gl, lam, zi = np.zeros(m), np.zeros(m), np.zeros(m)

    dt = grid.dt
    spb = grid.steps_per_sample
    counts = schedule.step_counts(dt) if schedule.stages else []
    total = sum(counts)
    n_rows = total // spb
    rec = np.zeros((n_rows, 5 + 4 * m))
    noise = NoiseStream(seed, dt)
    rates, prop, phi = _propagator(m, params, ensembles, dt, scheme)

    bin_pos, jacc, rec_idx = 0, 0.0, 0
    k_global = 0
    t_stage0 = 0.0
    bounds = [0.0]
    for stage, n_steps in zip(schedule.stages, counts):
        omega, det = _drive_of(stage)
        k_local = 0
        while k_local < n_steps:
            chunk = min(NOISE_CHUNK, n_steps - k_local)
            if stage.detect:
                dw = noise.increments(k_global + k_local, chunk)
            else:
                dw = np.empty(0)
            status, bin_pos, jacc, rec_idx = K.run_stage(
                y, m, g, nat, w, gam, wc, params.kappa, sqk1, omega, det,
                c_sig, c_meas, params.delta_het, dt, k_local, chunk, dw, stage.detect,
                spb, bin_pos, jacc, rec, rec_idx, t_stage0,
                use_loss, gl, lam, zi, scheme != "moment", rates, prop, phi,
            )
            if status >= 0:
                t_fail = t_stage0 + (k_local + status + 1) * dt
                raise IntegrationDiverged(t_fail, snapshot=_divergence_snapshot(
                    t_fail, len(bounds) - 1, y, m, nat, rec, rec_idx, ensembles))
            k_local += chunk
        k_global += n_steps
        t_stage0 += n_steps * dt
        bounds.append(t_stage0)

    names = channel_names(ensembles)
    channels = {nm: rec[:rec_idx, k].copy() for k, nm in enumerate(names)}
    meta = {
        "seed": seed,
        "dt": dt,
        "sample_dt": grid.sample_dt,
        "stage_boundaries": bounds,
        "detect": list(schedule.detection_active),
        "monitored": bool(getattr(config, "monitored", True)),
        "delta_het_hz": params.delta_het / (2 * math.pi),
        "ensembles": [{"m_F": e.m_F, "detuning_hz": e.detuning / (2 * math.pi),
                       "label": e.label} for e in ensembles],
        "rng": RNG_ALGORITHM,
        "scheme": scheme,
    }
    if hasattr(config, "content_hash"):
        meta["config_hash"] = config.content_hash()
    if not schedule.stages:
        meta["initial_state"] = st.as_dict()
    return TrajectoryRecord(channels, meta, final_state=CumulantState(y.copy(), m),
                            final_atoms=nat.copy())


class BalanceCheck:
    """Residual of d/dt[n + sum N(1+z)/2] = -kappa n - sum gamma N(1+z)/2 between samples.

    ``residual`` is per sample interval, divided by the largest dissipated
    flux over the record; ``max_relative`` is its largest magnitude.
    """

    def __init__(self, times, residual):
        self.times = times
        self.residual = residual
        self.max_relative = float(np.max(np.abs(residual))) if len(residual) else 0.0


def excitation_balance(record, config, t_from: float = 0.0) -> BalanceCheck:
    """Check excitation bookkeeping on an unmonitored, undriven record."""
    ch = record.channels
    t = np.asarray(record.times)
    sel = t >= t_from
    n = np.asarray(ch["n"])[sel]
    exc = np.zeros_like(n)
    loss = config.params.kappa * n
    for e in config.ensembles:
        lab = e.label
        pop = np.asarray(ch[f"N_mF_{lab}"])[sel] * (1.0 + np.asarray(ch[f"z_mF_{lab}"])[sel]) / 2
        exc += pop
        loss = loss + e.gamma * pop
    energy = n + exc
    dt = np.diff(t[sel])
    change = np.diff(energy)
    predicted = -0.5 * (loss[1:] + loss[:-1]) * dt
    scale = np.max(np.abs(predicted / dt)) if len(dt) else 1.0
    return BalanceCheck(t[sel][1:], (change - predicted) / dt / scale)
