"""Flat storage for first- and second-order normal-ordered moments.

All moments of a run live in one complex vector so that drift and diffusion
vectors share the layout and an Euler step is a single axpy.  For ``m``
sub-ensembles the layout is::

    [a, n, aa | s(m) z(m) as_p(m) as_m(m) as_z(m) | sp(m*m) sm(m*m) sz(m*m) zz(m*m)]

Pair blocks are row-major with row index ``j`` and column index ``i``, i.e.
``sp[j, i] = <s_j^- s_i^+>``.  For ``j == i`` the entry is the moment of two
distinct atoms of the same sub-ensemble.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

A, N, AA = 0, 1, 2


def layout_size(m: int) -> int:
    return 3 + 5 * m + 4 * m * m


def offsets(m: int) -> dict[str, int]:
    s = 3
    o = {"s": s, "z": s + m, "as_p": s + 2 * m, "as_m": s + 3 * m, "as_z": s + 4 * m}
    p = s + 5 * m
    o.update(sp=p, sm=p + m * m, sz=p + 2 * m * m, zz=p + 3 * m * m)
    return o


@dataclass
class CumulantState:
    """Moment vector plus the number of sub-ensembles it describes.

    Accessors return views into ``y``; writing through them mutates the state.
    Real-valued moments (``n``, ``z``, ``zz``) are stored with zero imaginary
    part and exposed as real views.
    """

    y: np.ndarray
    m: int

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.complex128)
        if self.y.shape != (layout_size(self.m),):
            raise ValueError(
                f"moment vector has shape {self.y.shape}, expected ({layout_size(self.m)},)"
            )

    @classmethod
    def zeros(cls, m: int) -> "CumulantState":
        return cls(np.zeros(layout_size(m), dtype=np.complex128), m)

    def copy(self) -> "CumulantState":
        return type(self)(self.y.copy(), self.m)

    def _vec(self, name):
        o = offsets(self.m)[name]
        return self.y[o : o + self.m]

    def _mat(self, name):
        o = offsets(self.m)[name]
        return self.y[o : o + self.m * self.m].reshape(self.m, self.m)

    @property
    def a(self) -> complex:
        return complex(self.y[A])

    @a.setter
    def a(self, value):
        self.y[A] = value

    @property
    def n(self) -> float:
        return float(self.y[N].real)

    @n.setter
    def n(self, value):
        self.y[N] = float(value)

    @property
    def aa(self) -> complex:
        return complex(self.y[AA])

    @aa.setter
    def aa(self, value):
        self.y[AA] = value

    @property
    def s(self):
        return self._vec("s")

    @property
    def z(self):
        return self._vec("z").real

    @property
    def as_p(self):
        return self._vec("as_p")

    @property
    def as_m(self):
        return self._vec("as_m")

    @property
    def as_z(self):
        return self._vec("as_z")

    @property
    def sp(self):
        return self._mat("sp")

    @property
    def sm(self):
        return self._mat("sm")

    @property
    def sz(self):
        return self._mat("sz")

    @property
    def zz(self):
        return self._mat("zz").real

    def set_vec(self, name: str, values) -> None:
        self._vec(name)[:] = values

    def set_mat(self, name: str, values) -> None:
        self._mat(name)[:, :] = values

    def symmetrize(self) -> None:
        """Project onto the Hermitian-consistent subspace in place."""
        self.y[N] = self.y[N].real
        self._vec("z")[:] = self._vec("z").real
        sp = self._mat("sp")
        sp[:, :] = 0.5 * (sp + sp.conj().T)
        sm = self._mat("sm")
        sm[:, :] = 0.5 * (sm + sm.T)
        zz = self._mat("zz")
        zz[:, :] = 0.5 * (zz.real + zz.real.T)

    def hermiticity_error(self) -> float:
        """Largest violation of the pair-moment symmetry relations."""
        sp, sm, zz = self._mat("sp"), self._mat("sm"), self._mat("zz")
        errs = [
            abs(self.y[N].imag),
            np.max(np.abs(self._vec("z").imag), initial=0.0),
            np.max(np.abs(sp - sp.conj().T), initial=0.0),
            np.max(np.abs(sm - sm.T), initial=0.0),
            np.max(np.abs(zz - zz.T), initial=0.0),
            np.max(np.abs(zz.imag), initial=0.0),
        ]
        return float(max(errs))

    def physicality_violations(self, tol: float = 1e-2) -> list[str]:
        out = []
        if self.n < -1e-6:
            out.append(f"n={self.n:.3g} < 0")
        z = self.z
        if np.any(z > 1 + tol) or np.any(z < -1 - tol):
            out.append("z outside [-1, 1]")
        if np.any(np.abs(self.s) > 0.5 + tol):
            out.append("|s| > 1/2")
        return out

    def as_dict(self) -> dict:
        """Plain-data snapshot (complex values as [re, im] pairs)."""

        def cplx(x):
            x = np.asarray(x)
            return np.stack([x.real, x.imag], axis=-1).tolist()

        return {
            "m": self.m,
            "a": [self.a.real, self.a.imag],
            "n": self.n,
            "aa": [self.aa.real, self.aa.imag],
            "s": cplx(self.s),
            "z": self.z.tolist(),
            "as_p": cplx(self.as_p),
            "as_m": cplx(self.as_m),
            "as_z": cplx(self.as_z),
            "sp": cplx(self.sp),
            "sm": cplx(self.sm),
            "sz": cplx(self.sz),
            "zz": self.zz.tolist(),
        }


class StateDerivative(CumulantState):
    """Drift (per unit time) or diffusion (per unit dW) with the state layout."""
