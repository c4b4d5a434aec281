"""Brute-force density-matrix reference for the moment equations.

Builds the full master-equation generator for a few explicit atoms and a
truncated cavity, and evaluates d<O>/dt = tr(O L[rho]) and the backaction
coefficient tr(O H[rho]) directly.  For a coherent field times a product of
identical single-atom states all third cumulants vanish, so the closed
equations must agree with these values exactly (up to Fock truncation).
"""

import math

import numpy as np
from scipy.special import factorial

SM = np.array([[0, 0], [1, 0]], dtype=complex)   # basis (|u>, |l>): s- = |l><u|
SZ = np.diag([1.0, -1.0]).astype(complex)
I2 = np.eye(2, dtype=complex)


def coherent(alpha, dim):
    k = np.arange(dim)
    v = np.exp(-abs(alpha) ** 2 / 2) * alpha ** k / np.sqrt(factorial(k))
    return v.astype(complex)


def kron_all(ops):
    out = np.array([[1.0 + 0j]])
    for o in ops:
        out = np.kron(out, o)
    return out


class ExactSystem:
    """Cavity (first factor) plus explicit atoms; ``atoms_per`` atoms per ensemble."""

    def __init__(self, dim, atoms_per, detunings, couplings, gammas, kappa,
                 kappa1, omega, det_drive, det_cav=0.0):
        self.dim = dim
        self.atoms_per = atoms_per
        self.owner = [i for i, n in enumerate(atoms_per) for _ in range(n)]
        self.n_at = len(self.owner)
        a = np.diag(np.sqrt(np.arange(1, dim)), 1).astype(complex)
        self.a = self._embed(0, a)
        self.sm = [self._embed(k + 1, SM) for k in range(self.n_at)]
        self.sz = [self._embed(k + 1, SZ) for k in range(self.n_at)]
        self.det, self.g, self.gam = detunings, couplings, gammas
        self.kappa, self.kappa1 = kappa, kappa1
        self.omega, self.det_drive, self.det_cav = omega, det_drive, det_cav

    def _embed(self, slot, op):
        ops = [np.eye(self.dim, dtype=complex)] + [I2] * self.n_at
        ops[slot] = op
        return kron_all(ops)

    def hamiltonian(self, t):
        a = self.a
        ad = a.conj().T
        H = self.det_cav * ad @ a
        for k, i in enumerate(self.owner):
            H = H + 0.5 * self.det[i] * self.sz[k]
            H = H + self.g[i] * (ad @ self.sm[k] + self.sm[k].conj().T @ a)
        drv = math.sqrt(self.kappa1) * self.omega * np.exp(1j * self.det_drive * t)
        H = H + drv * a + np.conj(drv) * ad
        return H

    def lindblad(self, rho, t):
        H = self.hamiltonian(t)
        out = -1j * (H @ rho - rho @ H)

        def D(c, rate):
            cd = c.conj().T
            return rate * (c @ rho @ cd - 0.5 * (cd @ c @ rho + rho @ cd @ c))

        out = out + D(self.a, self.kappa)
        for k, i in enumerate(self.owner):
            out = out + D(self.sm[k], self.gam[i])
        return out

    def backaction(self, rho, t, delta):
        a = self.a
        ea = np.trace(a @ rho)
        e = np.exp(-1j * delta * t)
        A = e * (a - ea * np.eye(len(rho)))
        return A @ rho + rho @ A.conj().T

    def product_state(self, alpha, single):
        """single[i] is the 2x2 density matrix for every atom of ensemble i."""
        psi = coherent(alpha, self.dim)
        ops = [np.outer(psi, psi.conj())] + [single[i] for i in self.owner]
        return kron_all(ops)

    def moments(self, rho, superop=None):
        """Flat moment vector in the package layout (pairs use distinct atoms)."""
        X = rho if superop is None else superop
        tr = lambda O: np.trace(O @ X)
        m = len(self.atoms_per)
        first = [self.owner.index(i) for i in range(m)]
        second = []
        for i in range(m):
            ks = [k for k, o in enumerate(self.owner) if o == i]
            second.append(ks[1] if len(ks) > 1 else None)
        a = self.a
        ad = a.conj().T
        y = [tr(a), tr(ad @ a), tr(a @ a)]
        sp = lambda k: self.sm[k].conj().T
        for name in ("s", "z", "as_p", "as_m", "as_z"):
            for i in range(m):
                k = first[i]
                op = {"s": self.sm[k], "z": self.sz[k], "as_p": a @ sp(k),
                      "as_m": a @ self.sm[k], "as_z": a @ self.sz[k]}[name]
                y.append(tr(op))
        for name in ("sp", "sm", "sz", "zz"):
            for j in range(m):
                for i in range(m):
                    kj = first[j]
                    ki = first[i] if i != j else second[i]
                    if ki is None:
                        y.append(np.nan)
                        continue
                    op = {"sp": self.sm[kj] @ sp(ki), "sm": self.sm[kj] @ self.sm[ki],
                          "sz": self.sm[kj] @ self.sz[ki], "zz": self.sz[kj] @ self.sz[ki]}[name]
                    y.append(tr(op))
        return np.array(y, dtype=complex)


def single_atom_rho(z, s):
    """2x2 density matrix with <sz> = z and <s-> = s (basis |u>, |l>)."""
    pu = 0.5 * (1 + z)
    # <s-> = tr(|l><u| rho) = rho_ul
    return np.array([[pu, s], [np.conj(s), 1 - pu]], dtype=complex)
