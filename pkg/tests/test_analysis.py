import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_config
from srclock import analysis as A
from srclock import engine
from srclock.detection import TrajectoryRecord
from srclock.errors import FitError, InsufficientDataError, PairingError

F = 4.5
TWO_PI = 2 * math.pi


def _record(current, sample_dt=2e-5, delta_het_hz=1e3):
    t = (np.arange(len(current)) + 1) * sample_dt
    return TrajectoryRecord({"t": t, "J": np.asarray(current, dtype=float)},
                            {"sample_dt": sample_dt, "delta_het_hz": delta_het_hz})


def _tone(f_lab, n=8192, sample_dt=2e-5, amp=1.0, phase=0.3):
    t = (np.arange(n) + 1) * sample_dt
    return amp * np.cos(TWO_PI * f_lab * t + phase)


def _lorentz_psd(f0=12.3, hwhm=4.0, amp=50.0, offset=2.0, n=400, df=1.0):
    f = (np.arange(n) - n // 2) * df
    return A.Periodogram(f, A.lorentzian(f, f0, hwhm, amp, offset), "rectangular", 1.0 / df)


# --- periodogram -------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(f=st.floats(-20000.0, 20000.0))
def test_frequency_mapping_is_exact(f):
    sample_dt, n, het = 2e-5, 4096, 1e3
    nyq = 0.5 / sample_dt
    f = max(min(f, nyq - het - 50.0), -het + 50.0)
    psd = A.periodogram(_record(_tone(het + f, n, sample_dt), sample_dt, het))
    k = int(np.argmax(psd.power))
    assert abs(psd.freqs[k] - f) <= psd.df


def test_parseval():
    rng = np.random.default_rng(1)
    x = rng.normal(size=5000) + _tone(1460.0, 5000)
    psd = A.periodogram(_record(x))
    assert np.sum(psd.power) * psd.df == pytest.approx(np.mean(x**2), rel=1e-6)


def test_parseval_odd_length():
    x = np.random.default_rng(2).normal(size=4001)
    psd = A.periodogram(_record(x))
    assert np.sum(psd.power) * psd.df == pytest.approx(np.mean(x**2), rel=1e-6)


def test_hann_window_keeps_mean_square_scale():
    x = np.random.default_rng(3).normal(size=1 << 14)
    psd = A.periodogram(_record(x), window="hann")
    assert np.mean(psd.power[1:-1]) == pytest.approx(2 * np.mean(x**2) * 2e-5, rel=0.05)


def test_periodogram_window_selection():
    x = np.arange(1000, dtype=float)
    rec = _record(x, sample_dt=1e-3)
    psd = A.periodogram(rec, t_start=0.5, t_end=0.9)
    assert psd.span == pytest.approx(0.4)
    # a window narrower than the minimum sample count is refused
    with pytest.raises(InsufficientDataError):
        A.periodogram(rec, t_start=0.5, t_end=0.6)
    with pytest.raises(InsufficientDataError):
        A.periodogram(rec, t_start=0.5, t_end=1.5)
    with pytest.raises(ValueError):
        A.periodogram(rec, window="kaiser")


def test_tone_amplitude_in_spectrum():
    # a tone of amplitude A carries mean square A^2/2, all in one bin on a bin centre
    n, dt = 4096, 2e-5
    f_lab = 100 / (n * dt)
    psd = A.periodogram(_record(_tone(f_lab, n, dt, amp=3.0), dt))
    k = int(np.argmax(psd.power))
    assert psd.power[k] * psd.df == pytest.approx(4.5, rel=1e-9)


# --- peaks and fits ----------------------------------------------------------

def test_find_peaks_orders_by_power_and_respects_band():
    psd = _lorentz_psd(f0=-40.0, amp=20.0)
    p = psd.power + A.lorentzian(psd.freqs, 60.0, 3.0, 80.0, 0.0)
    psd = A.Periodogram(psd.freqs, p, "rectangular", 1.0)
    bins = A.find_peaks(psd, 5.0)
    assert [round(psd.freqs[k]) for k in bins] == [60, -40]
    assert [round(psd.freqs[k]) for k in A.find_peaks(psd, 5.0, band=(-100, 0))] == [-40]
    assert A.find_peaks(psd, 5.0, max_peaks=1) == bins[:1]
    assert A.find_peaks(psd, 1e6) == []


def test_noiseless_lorentzian_recovered():
    psd = _lorentz_psd()
    k = int(np.argmax(psd.power))
    fit = A.fit_lorentzian(psd, k, 8)
    assert fit.ok
    assert fit.f0 == pytest.approx(12.3, abs=1e-6)
    assert fit.hwhm == pytest.approx(4.0, rel=1e-6)
    assert fit.amplitude == pytest.approx(50.0, rel=1e-6)
    assert fit.offset == pytest.approx(2.0, rel=1e-5)


@settings(max_examples=20, deadline=None)
@given(scale=st.floats(1e-6, 1e6))
def test_fit_invariant_under_power_scaling(scale):
    rng = np.random.default_rng(7)
    base = _lorentz_psd()
    noisy = base.power * (1 + 0.1 * rng.normal(size=len(base.power)))
    a = A.Periodogram(base.freqs, noisy, "rectangular", 1.0)
    b = A.Periodogram(base.freqs, noisy * scale, "rectangular", 1.0)
    k = int(np.argmax(a.power))
    fa, fb = A.fit_lorentzian(a, k), A.fit_lorentzian(b, k)
    assert fa.ok and abs(fa.f0 - 12.3) < 1.0
    assert fb.f0 == pytest.approx(fa.f0, rel=1e-9, abs=1e-9)
    assert fb.hwhm == pytest.approx(fa.hwhm, rel=1e-9)
    assert fb.amplitude == pytest.approx(fa.amplitude * scale, rel=1e-9)
    assert fb.offset == pytest.approx(fa.offset * scale, rel=1e-9, abs=1e-12 * scale)


def test_fit_window_limits():
    psd = _lorentz_psd(n=40, f0=-18.0)
    with pytest.raises(InsufficientDataError):
        A.fit_lorentzian(psd, 1, 6)
    with pytest.raises(InsufficientDataError):
        A.fit_lorentzian(psd, 20, 2)


def test_flat_spectrum_fit_not_ok_or_unresolved():
    psd = A.Periodogram(np.arange(50.0), np.zeros(50), "rectangular", 1.0)
    fit = A.fit_lorentzian(psd, 25)
    assert not fit.ok


def test_sub_bin_line_is_marked_unresolved():
    f = np.arange(-30.0, 31.0)
    p = np.full(f.size, 1.0)
    p[30] = 1e4
    fit = A.fit_lorentzian(A.Periodogram(f, p, "rectangular", 1.0), 30)
    assert fit.ok and fit.message.startswith("unresolved")
    assert fit.f0 == pytest.approx(0.0, abs=0.5)


def test_fit_peaks_drops_sidelobe_duplicates():
    psd = _lorentz_psd(hwhm=0.6, amp=1000.0, offset=1.0)
    k = int(np.argmax(psd.power))
    peaks = A.fit_peaks(psd, [k, k + 1, k - 1])
    assert len(peaks) == 1
    assert peaks[0].f0 == pytest.approx(12.3, abs=0.05)


def test_symmetric_pair_recovered_from_spectrum():
    f = np.arange(-600.0, 600.0, 0.5)
    p = A.lorentzian(f, 460.2, 12.0, 100.0, 2.0) + A.lorentzian(f, -459.6, 14.0, 90.0, 0.0)
    psd = A.Periodogram(f, p, "rectangular", 2.0)
    peaks = A.fit_peaks(psd, A.find_peaks(psd, 10.0), half_window_bins=40)
    c, h = A.pair_statistics(peaks)
    assert c == pytest.approx(0.3, abs=1e-3)
    assert h == pytest.approx(459.9, abs=1e-3)


# --- pairs -------------------------------------------------------------------

def test_pair_statistics_examples():
    c, h = A.pair_statistics([459.91, -460.31])
    assert c == pytest.approx(-0.20)
    assert h == pytest.approx(460.11)
    c, h = A.pair_statistics([50.3, -49.9])
    assert c == pytest.approx(0.2)
    assert h == pytest.approx(50.1)


def test_pair_statistics_errors():
    with pytest.raises(PairingError):
        A.pair_statistics([1.0, 2.0])
    with pytest.raises(PairingError):
        A.pair_statistics([1.0, -2.0, 3.0])


def test_pair_peaks_matches_by_magnitude():
    def pk(f):
        return A.LorentzianPeak(f, 1.0, 1.0, 0.0, 0.0)

    pairs = A.pair_peaks([pk(f) for f in (750.4, -249.8, 583.0, -750.1, 250.3, -583.6)])
    got = [(round(p.f0, 1), round(q.f0, 1)) for p, q in pairs]
    assert got == [(750.4, -750.1), (583.0, -583.6), (250.3, -249.8)]


# --- Allan -------------------------------------------------------------------

def _brute_allan(freqs, m, f_abs):
    nb = len(freqs) // m
    means = []
    for b in range(nb):
        acc = 0.0
        for v in freqs[b * m:(b + 1) * m]:
            acc += v
        means.append(acc / m)
    total = 0.0
    for i in range(nb - 1):
        total += (means[i + 1] - means[i]) ** 2 / (2 * f_abs**2)
    return math.sqrt(total / (nb - 1))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=16, max_size=200))
def test_allan_equals_brute_force_exactly(freqs):
    f_abs = 429e12
    s = A.allan_deviation(freqs, 1.1, TWO_PI * f_abs, (1, 2, 4, 8))
    for m, sig, nb in zip((1, 2, 4, 8), s.sigmas, s.n_samples):
        assert sig == _brute_allan(freqs, m, f_abs)
        assert nb == len(freqs) // m
    assert list(s.taus) == [1.1 * m for m in (1, 2, 4, 8)]


def test_allan_random_floats_match_brute_force():
    rng = np.random.default_rng(5)
    freqs = list(rng.normal(size=123))
    s = A.allan_deviation(freqs, 1.0, TWO_PI, (1, 3))
    assert s.sigmas[0] == pytest.approx(_brute_allan(freqs, 1, 1.0), rel=1e-14)
    assert s.sigmas[1] == pytest.approx(_brute_allan(freqs, 3, 1.0), rel=1e-14)


def test_allan_examples():
    w = TWO_PI * 1e3
    assert list(A.allan_deviation([3.0] * 16, 1.0, w).sigmas) == [0.0] * 4
    alt = [0.5 if i % 2 else -0.5 for i in range(20)]
    s = A.allan_deviation(alt, 1.0, w, (1,))
    assert s.sigmas[0] == pytest.approx(math.sqrt(2) * 0.5 / 1e3, rel=1e-12)
    with pytest.raises(InsufficientDataError):
        A.allan_deviation([1.0] * 15, 1.0, w, (8,))


def test_white_noise_allan_slope():
    rng = np.random.default_rng(0)
    exps = []
    for _ in range(1000):
        s = A.allan_deviation(rng.normal(size=120), 1.0, TWO_PI)
        exps.append(np.polyfit(np.log(s.taus), np.log(s.sigmas), 1)[0])
    assert np.mean(exps) == pytest.approx(-0.5, abs=0.1)


def test_fit_allan_slope_exact_input():
    taus = np.array([1.1, 2.2, 4.4, 8.8])
    s = A.AllanSeries(taus, 9.06e-16 / np.sqrt(taus), np.array([120, 60, 30, 15]))
    fit = A.fit_allan_slope(s)
    assert fit.c == pytest.approx(9.06e-16, rel=1e-12)
    assert fit.residual < 1e-12


def test_fit_allan_slope_errors():
    two = A.AllanSeries(np.array([1.0, 2.0]), np.array([1.0, 0.7]), np.array([4, 2]))
    with pytest.raises(FitError):
        A.fit_allan_slope(two)
    zero = A.AllanSeries(np.array([1.0, 2.0, 4.0]), np.array([1.0, 0.0, 0.5]), np.ones(3))
    with pytest.raises(FitError):
        A.fit_allan_slope(zero)


def test_reaccount_scales_coefficient():
    taus = np.array([1.1, 2.2, 4.4, 8.8])
    s = A.AllanSeries(taus, 1.44e-16 / np.sqrt(taus), np.ones(4))
    r = A.reaccount(s, 1.1, 0.25)
    assert np.allclose(r.taus, taus * 0.25 / 1.1)
    assert A.fit_allan_slope(r).c == pytest.approx(1.44e-16 * math.sqrt(0.25 / 1.1), rel=1e-12)


# --- closed forms ------------------------------------------------------------

def test_rabi_oracle_examples():
    g0 = TWO_PI * 2.41
    assert A.rabi_oracle(70.0, g0, F, 4.5, 100.0, 0.0)[0] == 0.0
    # resonant drive: full contrast at the first pi time
    pe, om0 = A.rabi_oracle(70.0, g0, F, 4.5, 0.0, 1.0)
    t_pi = math.pi / (4.5 * om0)
    assert A.rabi_oracle(70.0, g0, F, 4.5, 0.0, t_pi)[0] == pytest.approx(1.0)
    assert A.rabi_oracle(70.0, g0, F, 0.0, 50.0, 1.0)[0] == 0.0


@pytest.mark.parametrize("delta_b", [0.0, 300.0, TWO_PI * 166.7])
def test_rabi_contrast_independent_of_mf(delta_b):
    g0, a = TWO_PI * 2.41, 69.8
    maxima = []
    for mf in (0.5, 1.5, 2.5, 3.5, 4.5, -2.5):
        om0 = A.rabi_oracle(a, g0, F, mf, delta_b, 0.0)[1]
        t_half = math.pi / (abs(mf) * om0)
        maxima.append(A.rabi_oracle(a, g0, F, mf, delta_b, t_half)[0])
    assert np.allclose(maxima, maxima[0], rtol=1e-12)


def test_purcell_examples():
    g0, kappa = TWO_PI * 2.41, TWO_PI * 145e3
    assert A.purcell_rate(0.0, g0, F, 10.0, kappa) == 0.0
    g = 4.5 * g0 / math.sqrt(F * (F + 1))
    assert A.purcell_rate(4.5, g0, F, 0.0, kappa) == pytest.approx(4 * g * g / kappa)
    rates = [A.purcell_rate(mf, g0, F, TWO_PI * 100, kappa) for mf in (0.5, 1.5, 2.5, 3.5, 4.5)]
    assert all(b > a for a, b in zip(rates, rates[1:]))
    with pytest.raises(ValueError):
        A.purcell_rate(1.5, g0, F, 0.0, 0.0)


def _single_atom_decay(splitting_hz):
    # one atom: no collective (pair) terms; strong coupling so the decay is fast
    cfg = make_config(physics={"g0_hz": 2000.0, "gamma0_hz": 0.0},
                      atoms={"occupied": [4.5], "n_total": 1.0,
                             "splitting_hz_per_mf": splitting_hz},
                      initial={"mode": "explicit", "s": [0.0], "z": [-0.98]}, monitored=False,
                      schedule=[{"kind": "emit", "duration_s": 3.6e-3}])
    rec = engine.integrate(cfg)
    t = rec.times
    pe = (1 + rec.channels["z_mF_p9_2"]) / 2
    sel = t > 2e-5
    rate = -np.polyfit(t[sel], np.log(pe[sel]), 1)[0]
    return cfg, rate


def test_engine_decay_matches_purcell_rate():
    cfg, rate = _single_atom_decay(0.0)
    p = cfg.params
    expected = A.purcell_rate(4.5, p.g0, F, 0.0, p.kappa)
    # the fitted span covers two decay constants
    assert 3.6e-3 * expected > 2
    assert rate == pytest.approx(expected, rel=0.05)


def test_detuned_engine_decay_is_cavity_lorentzian():
    # the field amplitude relaxes at kappa/2, so the detuned rate is 4g^2 kappa/(kappa^2 + 4 D^2)
    cfg, rate = _single_atom_decay(72.5e3 / 4.5)
    p, e = cfg.params, cfg.ensembles[0]
    g = e.coupling
    assert rate == pytest.approx(4 * g * g * p.kappa / (p.kappa**2 + 4 * e.detuning**2), rel=0.01)


def test_driven_photon_number_value():
    k1 = TWO_PI * 72.5e3
    assert A.driven_photon_number(k1, 2 * k1, TWO_PI * 7.5e3) == pytest.approx(4874.9, rel=1e-4)


# --- pulse summary -----------------------------------------------------------

def test_pulse_summary_gaussian():
    t = np.arange(1, 20001) * 2e-5
    n = 40.0 * np.exp(-0.5 * ((t - 0.2) / 0.02) ** 2)
    s = A.pulse_summary(t, n, smooth=1e-4)
    assert s.peak_n == pytest.approx(40.0, rel=1e-3)
    assert s.t_peak == pytest.approx(0.2, abs=1e-4)
    assert s.fwhm == pytest.approx(2 * math.sqrt(2 * math.log(2)) * 0.02, rel=1e-2)
    assert s.span98 == pytest.approx(2 * 2.3263 * 0.02, rel=1e-2)


def test_pulse_summary_edge_cases():
    t = np.arange(10) * 1e-3
    assert A.pulse_summary(t, np.zeros(10)).peak_n == 0.0
    with pytest.raises(InsufficientDataError):
        A.pulse_summary(t, np.ones(10), t_from=1.0)
