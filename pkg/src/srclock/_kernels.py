"""Compiled inner loops.

The moment vector layout is documented in :mod:`srclock.state`.  Everything
here works on flat arrays so that a whole stage runs without returning to the
interpreter.
"""

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def close3(o, p, q, op, oq, pq):
    """Third-order cumulant closure <opq> ~ <o><pq> + <p><oq> + <q><op> - 2<o><p><q>."""
    return o * pq + p * oq + q * op - 2.0 * o * p * q


@njit(cache=True)
def rhs(y, m, g, nat, w, gam, wc, kappa, drive, c_meas, ph, drift, diff, with_diff):
    """Drift and (optionally) dW-coefficients of every moment.

    drive = sqrt(kappa1) * conj(Omega) * exp(-i w_d t), ph = exp(-i Delta t),
    c_meas = sqrt(eta kappa2) (zero disables backaction).
    """
    mm = m * m
    S = 3
    Z = S + m
    P = Z + m
    Q = P + m
    R = Q + m
    SP = R + m
    SM = SP + mm
    SZ = SM + mm
    ZZ = SZ + mm

    a = y[0]
    n = y[1].real
    aa = y[2]
    ac = np.conj(a)
    phc = np.conj(ph)
    two_c = 2.0 * c_meas

    coll_s = 0j
    coll_p = 0.0
    coll_q = 0j
    for i in range(m):
        gn = g[i] * nat[i]
        coll_s += gn * y[S + i]
        coll_p += gn * y[P + i].imag
        coll_q += gn * y[Q + i]

    drift[0] = -1j * wc * a - 1j * drive - 1j * coll_s
    drift[1] = -2.0 * (np.conj(drive) * a).imag - kappa * n - 2.0 * coll_p
    drift[2] = -2j * wc * aa - 2j * drive * a - 2j * coll_q

    if with_diff:
        a_ad_a = close3(ac, a, a, n, n, aa)  # <a+ a a>
        diff[0] = c_meas * (ph * (aa - a * a) + phc * (n - (ac * a).real))
        diff[1] = two_c * (ph * (a_ad_a - n * a)).real
        a3 = 3.0 * a * aa - 2.0 * a * a * a
        diff[2] = c_meas * (ph * (a3 - aa * a) + phc * (a_ad_a - ac * aa))

    for i in range(m):
        s = y[S + i]
        z = y[Z + i].real
        p = y[P + i]
        q = y[Q + i]
        r = y[R + i]
        gi = g[i]
        wi = w[i]
        nm1 = nat[i] - 1.0
        if nm1 < 0.0:
            nm1 = 0.0
        sc = np.conj(s)

        sum_sp = 0j
        sum_sm = 0j
        sum_sz = 0j
        for j in range(m):
            if j != i:
                gn = g[j] * nat[j]
                sum_sp += gn * y[SP + j * m + i]
                sum_sm += gn * y[SM + j * m + i]
                sum_sz += gn * y[SZ + j * m + i]

        ad_a_z = close3(ac, a, z, n, np.conj(r), r)      # <a+ a sz>
        a_a_z = close3(a, a, z, aa, r, r)                # <a a sz>
        a_a_sp = close3(a, a, sc, aa, p, p)              # <a a s+>
        ad_a_sm = close3(ac, a, s, n, np.conj(p), q)     # <a+ a s->

        drift[S + i] = -1j * wi * s + 1j * gi * r
        drift[Z + i] = 4.0 * gi * p.imag - gam[i] * (1.0 + z)
        # <a a+ sz> = <a+ a sz> + <sz>
        drift[P + i] = (1j * (np.conj(wi) - wc) * p - 1j * drive * sc
                        - 0.5j * gi * (1.0 - z) - 1j * gi * nm1 * y[SP + i * m + i]
                        - 1j * sum_sp - 1j * gi * (ad_a_z + z))
        drift[Q + i] = (-1j * (wc + wi) * q - 1j * drive * s - 1j * sum_sm
                        - 1j * gi * (nm1 * y[SM + i * m + i] - a_a_z))
        # <a a+ s-> = <a+ a s-> + <s->
        drift[R + i] = (-1j * wc * r - 1j * drive * z
                        - 1j * gi * (s + nm1 * y[SZ + i * m + i]) - 1j * sum_sz
                        - 2j * gi * (a_a_sp - ad_a_sm - s) - gam[i] * (a + r))

        if with_diff:
            a_a_sm = close3(a, a, s, aa, q, q)
            ad_a_sp = close3(ac, a, sc, n, np.conj(q), p)
            diff[S + i] = c_meas * (ph * (q - s * a) + phc * (np.conj(p) - ac * s))
            diff[Z + i] = two_c * (ph * (r - z * a)).real
            diff[P + i] = c_meas * (ph * (a_a_sp - p * a) + phc * (ad_a_sp - ac * p))
            diff[Q + i] = c_meas * (ph * (a_a_sm - q * a) + phc * (ad_a_sm - ac * q))
            diff[R + i] = c_meas * (ph * (a_a_z - r * a) + phc * (ad_a_z - ac * r))

    for j in range(m):
        sj = y[S + j]
        zj = y[Z + j].real
        pj = y[P + j]
        qj = y[Q + j]
        rj = y[R + j]
        gj = g[j]
        wj = w[j]
        sjc = np.conj(sj)
        pjc = np.conj(pj)
        for i in range(m):
            si = y[S + i]
            zi = y[Z + i].real
            pi = y[P + i]
            qi = y[Q + i]
            ri = y[R + i]
            gi = g[i]
            wi = w[i]
            ji = j * m + i
            spji = y[SP + ji]
            smji = y[SM + ji]
            szji = y[SZ + ji]
            szij = y[SZ + i * m + j]
            zzji = y[ZZ + ji].real
            sic = np.conj(si)

            a_zj_spi = close3(a, zj, sic, rj, pi, np.conj(szij))        # <a sz_j s+_i>
            ad_smj_zi = close3(ac, sj, zi, pjc, np.conj(ri), szji)      # <a+ s-_j sz_i>
            a_smj_zi = close3(a, sj, zi, qj, ri, szji)                  # <a s-_j sz_i>
            a_zj_smi = close3(a, zj, si, rj, qi, szij)                  # <a sz_j s-_i>
            a_zj_zi = close3(a, zj, zi, rj, ri, zzji)                   # <a sz_j sz_i>
            a_smj_spi = close3(a, sj, sic, qj, pi, spji)                # <a s-_j s+_i>
            ad_smj_smi = close3(ac, sj, si, pjc, np.conj(pi), smji)     # <a+ s-_j s-_i>
            a_spj_zi = close3(a, sjc, zi, pj, ri, np.conj(szji))        # <a s+_j sz_i>

            drift[SP + ji] = (-1j * (wj - np.conj(wi)) * spji
                              + 1j * gj * a_zj_spi - 1j * gi * ad_smj_zi)
            drift[SM + ji] = (-1j * (wi + wj) * smji
                              + 1j * gi * a_smj_zi + 1j * gj * a_zj_smi)
            drift[SZ + ji] = (-1j * wj * szji + 1j * gj * a_zj_zi
                              - 2j * gi * (a_smj_spi - ad_smj_smi)
                              - gam[i] * (sj + szji))
            drift[ZZ + ji] = (4.0 * gi * a_zj_spi.imag + 4.0 * gj * a_spj_zi.imag
                              - gam[i] * (zj + zzji) - gam[j] * (zi + zzji))

            if with_diff:
                ad_smj_spi = close3(ac, sj, sic, pjc, np.conj(qi), spji)
                a_smj_smi = close3(a, sj, si, qj, qi, smji)
                diff[SP + ji] = c_meas * (ph * (a_smj_spi - spji * a)
                                          + phc * (ad_smj_spi - ac * spji))
                diff[SM + ji] = c_meas * (ph * (a_smj_smi - smji * a)
                                          + phc * (ad_smj_smi - ac * smji))
                diff[SZ + ji] = c_meas * (ph * (a_smj_zi - szji * a)
                                          + phc * (ad_smj_zi - ac * szji))
                diff[ZZ + ji] = two_c * (ph * (a_zj_zi - zzji * a)).real


@njit(cache=True)
def symmetrize(y, m):
    mm = m * m
    S = 3
    Z = S + m
    SP = S + 5 * m
    SM = SP + mm
    ZZ = SM + 2 * mm
    y[1] = y[1].real
    for i in range(m):
        y[Z + i] = y[Z + i].real
    for j in range(m):
        for i in range(j, m):
            ji = j * m + i
            ij = i * m + j
            h = 0.5 * (y[SP + ji] + np.conj(y[SP + ij]))
            y[SP + ji] = h
            y[SP + ij] = np.conj(h)
            h = 0.5 * (y[SM + ji] + y[SM + ij])
            y[SM + ji] = h
            y[SM + ij] = h
            r = 0.5 * (y[ZZ + ji].real + y[ZZ + ij].real)
            y[ZZ + ji] = r
            y[ZZ + ij] = r


@njit(cache=True)
def linear_rates(m, w, gam, wc, kappa):
    """Diagonal linear part of the drift: d y_k/dt = lam_k y_k + (rest).

    The rate of every product moment is the sum of the rates of its factors,
    which keeps an exact treatment of this part consistent with covariances.
    """
    mm = m * m
    S = 3
    Z = S + m
    P = Z + m
    Q = P + m
    R = Q + m
    SP = R + m
    SM = SP + mm
    SZ = SM + mm
    ZZ = SZ + mm
    lam = np.zeros(3 + 5 * m + 4 * mm, dtype=np.complex128)
    lam[0] = -1j * wc
    lam[1] = -kappa
    lam[2] = -2j * wc
    for i in range(m):
        lam[S + i] = -1j * w[i]
        lam[Z + i] = -gam[i]
        lam[P + i] = 1j * (np.conj(w[i]) - wc)
        lam[Q + i] = -1j * (wc + w[i])
        lam[R + i] = -1j * wc - gam[i]
    for j in range(m):
        for i in range(m):
            ji = j * m + i
            lam[SP + ji] = -1j * (w[j] - np.conj(w[i]))
            lam[SM + ji] = -1j * (w[i] + w[j])
            lam[SZ + ji] = -1j * w[j] - gam[i]
            lam[ZZ + ji] = -(gam[i] + gam[j])
    return lam


@njit(cache=True, inline="always")
def _cov_step(X, x, y, nx, ny, bx, by, bX, nX, xn, yn, e, ph, h, d):
    """New value of <xy> from an exponential-Euler step of its covariance."""
    c = X - x * y
    nc = nX - x * ny - y * nx - bx * by
    gc = bX - x * by - y * bx
    return e * c + ph * h * nc + e * gc * d + xn * yn


@njit(cache=True)
def advance(y, m, drift, diff, dt, d, noisy, cumulant, lam, prop, phi):
    """Euler-Maruyama update of ``y`` in place.

    Without ``cumulant`` this is the plain step y + drift*dt + diff*d.

    With ``cumulant`` the step is taken in mean/covariance coordinates (the
    Ito term -D_x D_y dt enters the covariance drift) and moments are rebuilt
    as C + <x><y>; this avoids the -dt^2 x'y' bias that re-multiplying Euler
    means puts into every covariance.  The diagonal linear part ``lam`` of
    each coordinate is integrated exactly: ``prop = exp(lam dt)`` and
    ``phi = (exp(lam dt) - 1) / (lam dt)`` (all ones for a plain step).  The
    rate of a product moment is the sum of its factors' rates, so ``lam``
    is also the linear rate of the covariance.
    """
    size = y.shape[0]
    if not cumulant:
        for idx in range(size):
            y[idx] += drift[idx] * dt
            if noisy:
                y[idx] += diff[idx] * d
        return
    mm = m * m
    S = 3
    Z = S + m
    P = Z + m
    Q = P + m
    R = Q + m
    SP = R + m
    SM = SP + mm
    SZ = SM + mm
    ZZ = SZ + mm
    if not noisy:
        d = 0.0
        for idx in range(size):
            diff[idx] = 0.0
    # remainder after the diagonal linear part
    for idx in range(size):
        drift[idx] -= lam[idx] * y[idx]
    old = y.copy()

    # means: a, s_i, z_i
    a = old[0]
    y[0] = prop[0] * a + phi[0] * dt * drift[0] + prop[0] * diff[0] * d
    for i in range(m):
        k = S + i
        y[k] = prop[k] * old[k] + phi[k] * dt * drift[k] + prop[k] * diff[k] * d
        k = Z + i
        y[k] = (prop[k] * old[k].real + phi[k] * dt * drift[k].real
                + prop[k] * diff[k].real * d).real
    an = y[0]
    na = drift[0]
    ba = diff[0]
    ac = np.conj(a)
    anc = np.conj(an)
    nac = np.conj(na)
    bac = np.conj(ba)

    k = 1
    y[k] = _cov_step(old[k], ac, a, nac, na, bac, ba, diff[k], drift[k], anc, an,
                     prop[k], phi[k], dt, d).real
    k = 2
    y[k] = _cov_step(old[k], a, a, na, na, ba, ba, diff[k], drift[k], an, an,
                     prop[k], phi[k], dt, d)
    for i in range(m):
        s = old[S + i]
        z = old[Z + i].real
        sn = y[S + i]
        zn = y[Z + i].real
        ns = drift[S + i]
        nz = drift[Z + i].real
        bs = diff[S + i]
        bz = diff[Z + i].real
        k = P + i
        y[k] = _cov_step(old[k], a, np.conj(s), na, np.conj(ns), ba, np.conj(bs),
                         diff[k], drift[k], an, np.conj(sn), prop[k], phi[k], dt, d)
        k = Q + i
        y[k] = _cov_step(old[k], a, s, na, ns, ba, bs, diff[k], drift[k], an, sn,
                         prop[k], phi[k], dt, d)
        k = R + i
        y[k] = _cov_step(old[k], a, z, na, nz, ba, bz, diff[k], drift[k], an, zn,
                         prop[k], phi[k], dt, d)
    for j in range(m):
        sj = old[S + j]
        zj = old[Z + j].real
        sjn = y[S + j]
        zjn = y[Z + j].real
        nsj = drift[S + j]
        nzj = drift[Z + j].real
        bsj = diff[S + j]
        bzj = diff[Z + j].real
        for i in range(m):
            si = old[S + i]
            zi = old[Z + i].real
            sin_ = y[S + i]
            zin = y[Z + i].real
            nsi = drift[S + i]
            nzi = drift[Z + i].real
            bsi = diff[S + i]
            bzi = diff[Z + i].real
            ji = j * m + i
            k = SP + ji
            y[k] = _cov_step(old[k], sj, np.conj(si), nsj, np.conj(nsi), bsj, np.conj(bsi),
                             diff[k], drift[k], sjn, np.conj(sin_), prop[k], phi[k], dt, d)
            k = SM + ji
            y[k] = _cov_step(old[k], sj, si, nsj, nsi, bsj, bsi, diff[k], drift[k], sjn, sin_,
                             prop[k], phi[k], dt, d)
            k = SZ + ji
            y[k] = _cov_step(old[k], sj, zi, nsj, nzi, bsj, bzi, diff[k], drift[k], sjn, zin,
                             prop[k], phi[k], dt, d)
            k = ZZ + ji
            y[k] = _cov_step(old[k], zj, zi, nzj, nzi, bzj, bzi, diff[k], drift[k], zjn, zin,
                             prop[k], phi[k], dt, d).real


@njit(cache=True)
def loss_injection(y, m, nat, gamma_los, lam, z_inj, dt):
    """One forward-Euler step of dN/dt = -gamma_los N + lam with moment relaxation.

    Injected atoms carry <s-> = 0 and <sz> = z_inj; a fraction
    f_i = lam_i dt / N_i of the atoms in ensemble i is new after the step.
    Loss removes atoms without bias, leaving per-atom moments unchanged.
    """
    mm = m * m
    S = 3
    Z = S + m
    P = Z + m
    Q = P + m
    R = Q + m
    SP = R + m
    SM = SP + mm
    SZ = SM + mm
    ZZ = SZ + mm
    f = np.zeros(m)
    any_inj = False
    for i in range(m):
        if lam[i] > 0.0:
            any_inj = True
            if nat[i] > 0.0:
                f[i] = lam[i] * dt / nat[i]
                if f[i] > 1.0:
                    f[i] = 1.0
            else:
                f[i] = 1.0
    if any_inj:
        a = y[0]
        for j in range(m):
            sj = y[S + j]
            zj = y[Z + j].real
            for i in range(m):
                fi = f[i]
                fj = f[j]
                if fi == 0.0 and fj == 0.0:
                    continue
                si = y[S + i]
                zi = y[Z + i].real
                keep = 1.0 - fi - fj
                ji = j * m + i
                y[SP + ji] = keep * y[SP + ji]
                y[SM + ji] = keep * y[SM + ji]
                y[SZ + ji] = keep * y[SZ + ji] + fi * sj * z_inj[i]
                y[ZZ + ji] = keep * y[ZZ + ji].real + fi * zj * z_inj[i] + fj * zi * z_inj[j]
        for i in range(m):
            fi = f[i]
            if fi == 0.0:
                continue
            zi = y[Z + i].real
            y[Z + i] = zi + fi * (z_inj[i] - zi)
            y[S + i] = (1.0 - fi) * y[S + i]
            y[P + i] = (1.0 - fi) * y[P + i]
            y[Q + i] = (1.0 - fi) * y[Q + i]
            y[R + i] = (1.0 - fi) * y[R + i] + fi * a * z_inj[i]
    for i in range(m):
        nat[i] = nat[i] + (-gamma_los[i] * nat[i] + lam[i]) * dt
        if nat[i] < 0.0:
            nat[i] = 0.0


@njit(cache=True)
def run_stage(y, m, g, nat, w, gam, wc, kappa, sqk1, omega, det_drive,
              c_sig, c_meas, delta_het, dt, k0, n_steps, dw, detect,
              spb, bin_pos, jacc, rec, rec_idx, t_stage0,
              use_loss, gamma_los, lam_inj, z_inj, cumulant, rates, prop, phi):
    """Advance ``n_steps`` Euler-Maruyama steps of one stage.

    ``k0`` is the stage-local index of the first step (phases use stage-local
    time k*dt).  Samples are written to ``rec`` every ``spb`` steps with
    columns [t, J, n, re_a, im_a, (z, re_as_p, im_as_p, N) per ensemble].
    Returns (status, bin_pos, jacc, rec_idx); status is -1 on success or the
    stage-local step index at which a non-finite value appeared.
    """
    size = y.shape[0]
    drift = np.zeros(size, dtype=np.complex128)
    diff = np.zeros(size, dtype=np.complex128)
    with_diff = detect and c_meas > 0.0
    sample_dt = spb * dt
    for k in range(n_steps):
        tl = (k0 + k) * dt
        drive = sqk1 * omega * np.exp(-1j * det_drive * tl)
        ph = np.exp(-1j * delta_het * tl)
        rhs(y, m, g, nat, w, gam, wc, kappa, drive, c_meas, ph, drift, diff, with_diff)
        d = 0.0
        if detect:
            d = dw[k]
            jacc += c_sig * 2.0 * (ph * y[0]).real * dt + d
        advance(y, m, drift, diff, dt, d, with_diff, cumulant, rates, prop, phi)
        symmetrize(y, m)
        if use_loss:
            loss_injection(y, m, nat, gamma_los, lam_inj, z_inj, dt)
        bin_pos += 1
        if bin_pos == spb:
            if not np.isfinite(y[1].real):
                return k0 + k, bin_pos, jacc, rec_idx
            for idx in range(size):
                if not (np.isfinite(y[idx].real) and np.isfinite(y[idx].imag)):
                    return k0 + k, bin_pos, jacc, rec_idx
            row = rec[rec_idx]
            row[0] = t_stage0 + (k0 + k + 1) * dt
            row[1] = jacc / sample_dt
            row[2] = y[1].real
            row[3] = y[0].real
            row[4] = y[0].imag
            for i in range(m):
                row[5 + 4 * i] = y[3 + m + i].real
                row[6 + 4 * i] = y[3 + 2 * m + i].real
                row[7 + 4 * i] = y[3 + 2 * m + i].imag
                row[8 + 4 * i] = nat[i]
            rec_idx += 1
            bin_pos = 0
            jacc = 0.0
    for idx in range(size):
        if not (np.isfinite(y[idx].real) and np.isfinite(y[idx].imag)):
            return k0 + n_steps - 1, bin_pos, jacc, rec_idx
    return -1, bin_pos, jacc, rec_idx
