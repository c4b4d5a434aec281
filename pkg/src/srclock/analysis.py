"""Metrology pipeline on photocurrent records and closed-form reference rates.

Spectra are one-sided periodograms of the real photocurrent whose frequency
axis is shifted by the heterodyne offset, so a transition detuned by ``f``
from the cavity shows up at ``f`` (signed).  Power is a density in
current^2/Hz normalised so that ``sum(power) * df`` is the mean square of the
analysed samples; white shot noise of unit intensity sits at 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, signal

from .errors import FitError, InsufficientDataError, PairingError

MIN_WINDOW_SAMPLES = 256
MIN_FIT_POINTS = 7
MIN_HWHM_BINS = 0.05


@dataclass(frozen=True)
class Periodogram:
    freqs: np.ndarray
    power: np.ndarray
    window: str
    span: float

    @property
    def df(self) -> float:
        return 1.0 / self.span

    def __len__(self):
        return len(self.freqs)


@dataclass(frozen=True)
class LorentzianPeak:
    f0: float
    hwhm: float
    amplitude: float
    offset: float
    residual: float
    ok: bool = True
    message: str = ""

    def as_dict(self) -> dict:
        return {"f0_hz": self.f0, "hwhm_hz": self.hwhm, "amplitude": self.amplitude,
                "offset": self.offset, "residual": self.residual, "ok": self.ok,
                "message": self.message}


@dataclass(frozen=True)
class AllanSeries:
    taus: np.ndarray
    sigmas: np.ndarray
    n_samples: np.ndarray
    group_std: np.ndarray | None = None

    def __len__(self):
        return len(self.taus)


@dataclass(frozen=True)
class AllanFit:
    c: float
    residual: float


# --- spectrum --------------------------------------------------------------

def periodogram(record, window: str = "rectangular", t_start: float | None = None,
                t_end: float | None = None, delta_het_hz: float | None = None) -> Periodogram:
    """Power spectral density of ``record.current`` over ``(t_start, t_end]``.

    Sample ``k`` is the average current over the bin ending at ``times[k]``;
    only bins lying entirely inside the window are used.
    """
    t = np.asarray(record.times, dtype=float)
    j = np.asarray(record.current, dtype=float)
    dt = record.sample_dt
    if delta_het_hz is None:
        delta_het_hz = float(record.meta.get("delta_het_hz", 0.0))
    if len(t) == 0:
        raise InsufficientDataError("empty record")
    lo = t[0] - dt if t_start is None else t_start
    hi = t[-1] if t_end is None else t_end
    tol = 1e-9 * dt
    if lo < t[0] - dt - tol or hi > t[-1] + tol or hi <= lo:
        raise InsufficientDataError(
            f"window ({lo:g}, {hi:g}] outside record ({t[0] - dt:g}, {t[-1]:g}]")
    sel = (t - dt >= lo - tol) & (t <= hi + tol)
    x = j[sel]
    if len(x) < MIN_WINDOW_SAMPLES:
        raise InsufficientDataError(
            f"window holds {len(x)} samples, need at least {MIN_WINDOW_SAMPLES}")
    if window == "hann":
        w = signal.get_window("hann", len(x), fftbins=True)
        x = x * w / math.sqrt(np.mean(w * w))
    elif window != "rectangular":
        raise ValueError(f"unknown window {window!r}")
    n = len(x)
    span = n * dt
    spec = np.fft.rfft(x)
    power = (dt * np.abs(spec)) ** 2 / span
    # fold negative frequencies onto positive ones (not DC / Nyquist)
    hi_bin = len(power) - 1 if n % 2 == 0 else len(power)
    power[1:hi_bin] *= 2.0
    freqs = np.fft.rfftfreq(n, dt) - delta_het_hz
    return Periodogram(freqs, power, window, span)


def find_peaks(psd: Periodogram, min_prominence_ratio: float = 30.0, max_peaks: int = 10,
               band: tuple | None = None) -> list[int]:
    """Bins of local maxima above ``min_prominence_ratio`` x median power.

    Candidates closer than 3 bins are merged (stronger kept).  Result is
    sorted by decreasing power.  ``band=(f_lo, f_hi)`` restricts the search;
    the median is taken over the same band.
    """
    p = np.asarray(psd.power)
    if p.size == 0:
        return []
    mask = np.ones(p.size, dtype=bool)
    if band is not None:
        mask = (psd.freqs >= band[0]) & (psd.freqs <= band[1])
    if not mask.any():
        return []
    floor = float(np.median(p[mask]))
    pm = np.where(mask, p, -np.inf)
    idx, _ = signal.find_peaks(pm, height=min_prominence_ratio * floor, distance=3)
    idx = sorted(idx.tolist(), key=lambda k: -p[k])
    return idx[:max_peaks]


def lorentzian(f, f0, hwhm, amplitude, offset):
    return amplitude * hwhm**2 / ((f - f0) ** 2 + hwhm**2) + offset


def _half_width_guess(p, k, base):
    half = base + 0.5 * (p[k] - base)
    widths = []
    for step in (-1, 1):
        i = k
        while 0 <= i + step < len(p) and p[i + step] > half:
            i += step
        j = i + step
        if 0 <= j < len(p) and p[i] != p[j]:
            widths.append(abs(i - k) + (p[i] - half) / (p[i] - p[j]))
        else:
            widths.append(abs(i - k) + 0.5)
    return max(0.5 * sum(widths), 0.25)


def _lorentz_jac(x, q):
    f0, g, a, _ = q
    u = x - f0
    d = u * u + g * g
    return np.column_stack([2 * a * g * g * u / d**2, 2 * a * g * u * u / d**2, g * g / d,
                            np.ones_like(x)])


def _polish(x, y, q, lower, upper, iters=30):
    best = np.array(q, dtype=float)
    cost = np.sum((lorentzian(x, *best) - y) ** 2)
    for _ in range(iters):
        r = lorentzian(x, *best) - y
        step = np.linalg.lstsq(_lorentz_jac(x, best), -r, rcond=None)[0]
        cand = best + step
        if not (np.all(cand > lower) and np.all(cand < upper)):
            break
        c = np.sum((lorentzian(x, *cand) - y) ** 2)
        if c > cost * (1 + 1e-12):
            break
        best, cost = cand, min(c, cost)
        if np.all(np.abs(step) <= 1e-14 * (1 + np.abs(best))):
            break
    return best


def fit_lorentzian(psd: Periodogram, k: int, half_window_bins: int = 6) -> LorentzianPeak:
    """Least-squares Lorentzian over bins ``k - half_window_bins .. k + half_window_bins``.

    Data are scaled to unit peak and the frequency axis is measured in bins
    from ``k`` during the fit, so the result is invariant under power
    rescaling.  A failed or unphysical fit comes back with ``ok=False``.
    """
    lo, hi = k - half_window_bins, k + half_window_bins + 1
    if lo < 0 or hi > len(psd):
        raise InsufficientDataError(f"fit window around bin {k} leaves the spectrum")
    if hi - lo < MIN_FIT_POINTS:
        raise InsufficientDataError(f"fit window has {hi - lo} points, need {MIN_FIT_POINTS}")
    p = np.asarray(psd.power[lo:hi], dtype=float)
    scale = float(p.max())
    if not scale > 0:
        return LorentzianPeak(float(psd.freqs[k]), 0.0, 0.0, 0.0, math.inf, False, "zero power")
    y = p / scale
    x = np.arange(lo, hi, dtype=float) - k
    c0 = float(np.median(y))
    kk = k - lo
    g0 = _half_width_guess(y, kk, c0)
    x0 = np.array([0.0, g0, y[kk], c0])

    def resid(q):
        return lorentzian(x, q[0], q[1], q[2], q[3]) - y

    # bounds keep an unresolved (sub-bin) line from collapsing to zero width
    lower = [x[0], MIN_HWHM_BINS, 0.0, -np.inf]
    upper = [x[-1], float(x[-1] - x[0]), np.inf, np.inf]
    x0[1] = min(max(x0[1], MIN_HWHM_BINS), upper[1])
    try:
        sol = optimize.least_squares(resid, x0, method="trf", bounds=(lower, upper), xtol=1e-10,
                                     ftol=1e-12, gtol=1e-12, max_nfev=1000)
        if sol.status > 0 and not np.any(sol.active_mask):
            # the cost is flat to ~eps near the optimum, which pins the parameters
            # only to ~sqrt(eps); Gauss-Newton on the gradient gets them to full precision
            sol.x = _polish(x, y, sol.x, lower, upper)
            sol.fun = resid(sol.x)
    except (ValueError, np.linalg.LinAlgError) as exc:
        return LorentzianPeak(float(psd.freqs[k]), 0.0, 0.0, 0.0, math.inf, False, str(exc))
    f0b, gb, ab, cb = sol.x
    gb = abs(gb)
    df = psd.df
    f0 = float(psd.freqs[k] + f0b * df)
    rms = float(np.sqrt(np.mean(sol.fun**2)))
    res = rms / abs(ab) if ab != 0 else math.inf
    at_edge = f0b <= x[0] or f0b >= x[-1]
    at_floor = gb <= MIN_HWHM_BINS * (1 + 1e-6)
    # a sub-bin line creeps toward zero width and may exhaust the budget
    ok = bool((sol.status > 0 or at_floor) and ab > 0 and not at_edge)
    if not ok:
        msg = sol.message if sol.status <= 0 else "unphysical parameters"
    elif at_floor:
        # the centre is still fixed by the bins the line straddles
        msg = "unresolved: width at floor"
    else:
        msg = ""
    return LorentzianPeak(f0, float(gb * df), float(ab * scale), float(cb * scale), res, ok, msg)


def fit_peaks(psd: Periodogram, bins, half_window_bins: int = 6,
              merge_bins: float = 2.0) -> list[LorentzianPeak]:
    """Fit every candidate bin, dropping failed fits and fits that land within
    ``merge_bins`` of a stronger candidate's result (window sidelobes)."""
    out: list[LorentzianPeak] = []
    for k in bins:
        try:
            p = fit_lorentzian(psd, k, half_window_bins)
        except InsufficientDataError:
            continue
        if not p.ok:
            continue
        if any(abs(p.f0 - q.f0) < merge_bins * psd.df for q in out):
            continue
        out.append(p)
    return out


def pair_statistics(peaks) -> tuple[float, float]:
    """(center, half_difference) of a +/- pair of fitted peaks, in Hz."""
    peaks = list(peaks)
    if len(peaks) != 2:
        raise PairingError(f"need exactly two peaks, got {len(peaks)}")
    fs = sorted(p.f0 if hasattr(p, "f0") else float(p) for p in peaks)
    fm, fp = fs
    if not (fm < 0 < fp):
        raise PairingError(f"peaks {fm:g}, {fp:g} Hz do not straddle zero")
    return 0.5 * (fp + fm), 0.5 * (fp - fm)


def pair_peaks(peaks) -> list[tuple]:
    """Match positive and negative peaks by closest |f0| (greedy, strongest first)."""
    pos = [p for p in peaks if p.f0 > 0]
    neg = [p for p in peaks if p.f0 < 0]
    cands = sorted(((abs(abs(p.f0) - abs(q.f0)), i, j)
                    for i, p in enumerate(pos) for j, q in enumerate(neg)))
    used_p, used_n, out = set(), set(), []
    for _, i, j in cands:
        if i in used_p or j in used_n:
            continue
        used_p.add(i)
        used_n.add(j)
        out.append((pos[i], neg[j]))
    return sorted(out, key=lambda pr: -abs(pr[0].f0))


# --- Allan deviation -------------------------------------------------------

def _adev_blocks(freqs, m, f_abs):
    nb = len(freqs) // m
    # plain left-to-right sums, term by term as in the definition
    means = []
    for b in range(nb):
        acc = 0.0
        for v in freqs[b * m:(b + 1) * m]:
            acc += v
        means.append(acc / m)
    total = 0.0
    for i in range(nb - 1):
        total += (means[i + 1] - means[i]) ** 2 / (2.0 * f_abs * f_abs)
    return math.sqrt(total / (nb - 1)), nb


def allan_deviation(freqs, T_c: float, omega_a_abs: float, m_list=(1, 2, 4, 8)) -> AllanSeries:
    """Fractional Allan deviation of a frequency sequence (Hz) on non-overlapping blocks.

    For each ``m`` the sequence is cut into ``len(freqs) // m`` consecutive
    blocks; adjacent block means are differenced.  ``omega_a_abs`` is the
    absolute angular clock frequency.
    """
    freqs = [float(f) for f in freqs]
    f_abs = omega_a_abs / (2.0 * math.pi)
    taus, sig, ns = [], [], []
    for m in m_list:
        m = int(m)
        if m < 1 or len(freqs) < 2 * m:
            raise InsufficientDataError(f"need at least {2 * m} frequencies for m={m}, "
                                        f"have {len(freqs)}")
        s, nb = _adev_blocks(freqs, m, f_abs)
        taus.append(m * T_c)
        sig.append(s)
        ns.append(nb)
    return AllanSeries(np.array(taus), np.array(sig), np.array(ns))


def fit_allan_slope(series: AllanSeries) -> AllanFit:
    """c in sigma = c / sqrt(tau / 1 s), least squares in log space with slope -1/2."""
    taus = np.asarray(series.taus, dtype=float)
    sig = np.asarray(series.sigmas, dtype=float)
    if len(taus) < 3:
        raise FitError(f"need at least 3 Allan points, got {len(taus)}")
    if np.any(sig <= 0) or np.any(taus <= 0) or not np.all(np.isfinite(sig)):
        raise FitError("Allan series has non-positive or non-finite points")
    r = np.log(sig) + 0.5 * np.log(taus)
    logc = float(np.mean(r))
    return AllanFit(math.exp(logc), float(np.sqrt(np.mean((r - logc) ** 2))))


def reaccount(series: AllanSeries, T_c_old: float, T_c_new: float) -> AllanSeries:
    """Same frequency sequence attributed to a shorter or longer duty cycle."""
    f = T_c_new / T_c_old
    return AllanSeries(series.taus * f, series.sigmas.copy(), series.n_samples.copy(),
                       None if series.group_std is None else series.group_std.copy())


# --- closed-form references -----------------------------------------------

def rabi_oracle(a_cav: float, g0: float, F: float, m_F: float, delta_b: float,
                T: float) -> tuple[float, float]:
    """Excited population after driving for ``T`` with cavity amplitude ``a_cav``.

    Returns ``(P_e(T), Omega_0)``; the Rabi frequency of ``m_F`` is
    ``|m_F| * Omega_0``.
    """
    cg = math.sqrt(F * (F + 1.0))
    nu = a_cav * m_F * g0 / cg
    omega0 = math.sqrt(delta_b**2 + abs(2.0 * a_cav * g0 / cg) ** 2)
    om = abs(m_F) * omega0
    if om == 0.0:
        return 0.0, omega0
    return abs(2.0 * nu / om) ** 2 * math.sin(om * T / 2.0) ** 2, omega0


def purcell_rate(m_F: float, g0: float, F: float, delta_b: float, kappa: float) -> float:
    """Cavity-enhanced single-atom decay rate of the m_F transition (rad/s)."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    g = m_F * g0 / math.sqrt(F * (F + 1.0))
    return 4.0 * g * g * kappa / (m_F**2 * delta_b**2 + kappa**2)


def driven_photon_number(kappa1: float, kappa: float, omega_m: float) -> float:
    """Empty-cavity steady state |2 sqrt(kappa1) Omega_m / kappa|^2."""
    return (2.0 * math.sqrt(kappa1) * omega_m / kappa) ** 2


# --- pulse shape -----------------------------------------------------------

@dataclass(frozen=True)
class PulseSummary:
    peak_n: float
    t_peak: float
    fwhm: float
    span98: float
    extra: dict = field(default_factory=dict)


def pulse_summary(times, n, t_from: float = 0.0, smooth: float = 5e-3) -> PulseSummary:
    """Peak, time of peak and widths of the photon-number envelope after ``t_from``.

    The envelope is a running mean over ``smooth`` seconds (removes beats).
    ``fwhm`` spans the outermost half-maximum crossings; ``span98`` is the
    interval holding the central 98 % of the emitted photons (integral of n).
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(n, dtype=float)
    sel = t > t_from
    t, y = t[sel], y[sel]
    if len(t) < 2:
        raise InsufficientDataError("no samples after t_from")
    dt = t[1] - t[0]
    w = max(1, int(round(smooth / dt)))
    env = np.convolve(y, np.ones(w) / w, mode="same") if w > 1 else y
    k = int(np.argmax(env))
    peak = float(env[k])
    if not peak > 0:
        return PulseSummary(0.0, float("nan"), 0.0, 0.0)
    above = np.flatnonzero(env >= 0.5 * peak)
    fwhm = float(t[above[-1]] - t[above[0]] + dt)
    c = np.cumsum(np.clip(y, 0.0, None))
    if c[-1] > 0:
        c = c / c[-1]
        span = float(t[np.searchsorted(c, 0.99)] - t[np.searchsorted(c, 0.01)])
    else:
        span = 0.0
    return PulseSummary(peak, float(t[k]), fwhm, span)
