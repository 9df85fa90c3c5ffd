"""
Mixing matrices linking the three phase-stepped frames of one orientation to the three spectral
bands, their closed-form inverses, and band separation.

Sign convention: with the forward transform ``sum_r f(r) exp(-i 2 pi k.r)`` a frame illuminated by
``1 - (m/2) cos(2 pi p.r + phi)`` has the spectrum

    D(k) = [S(k) - (m/4) e^{+i phi} S(k - p) - (m/4) e^{-i phi} S(k + p)] H(k)

so row j of the mixing matrix is ``[1, -(m/4) e^{+i phi_j}, -(m/4) e^{-i phi_j}]``.
"""
from dataclasses import dataclass

import numpy as np

SINGULAR_TOL = 1e-8


class SingularPhasesError(ValueError):
    """The three phases do not give an invertible mixing matrix."""


@dataclass(frozen=True)
class SeparationMatrix:
    """
    Mixing matrix with its inverse.

    :ivar entries: 3 x 3 complex mixing matrix
    :ivar inverse: 3 x 3 complex inverse (closed form)
    :ivar kind: ``"standard"`` (absolute phases) or ``"tirf"`` (phases relative to the first)
    :ivar m_used: modulation the matrix was built with
    :ivar delta: determinant factor of the closed form
    """
    entries: np.ndarray
    inverse: np.ndarray
    kind: str
    m_used: float
    delta: complex


@dataclass
class BandSet:
    """
    Central and side bands of one orientation.

    ``minus`` holds ``S(k - p)H(k)`` and ``plus`` holds ``S(k + p)H(k)`` until relocation, after
    which both hold object frequency ``k`` at bin ``k``.

    :ivar stage: ``noisy``, ``wiener``, ``shifted`` or ``phase-matched``
    :ivar spacing: spatial sample spacing of the grid the bands live on
    """
    center: np.ndarray
    minus: np.ndarray
    plus: np.ndarray
    p: tuple = None
    stage: str = "noisy"
    spacing: float = 1.0

    @property
    def n(self):
        return self.center.shape[0]

    def as_array(self):
        return np.stack([self.center, self.minus, self.plus])


def mixing_matrix(phases, m=1.0):
    """3 x 3 matrix mapping ``[S H, S(k-p) H, S(k+p) H]`` to the three frame spectra."""
    ph = np.asarray(phases, dtype=float)
    if ph.shape != (3,):
        raise ValueError("three phases required")
    e = np.exp(1j * ph)
    return np.stack([np.ones(3), -0.25 * m * e, -0.25 * m * np.conj(e)], axis=1)


def _closed_form_inverse(phases, m):
    """
    Closed-form inverse of :func:`mixing_matrix`, written in terms of ``t = -phases`` so that it
    reads as the inverse of rows ``[1, -(m/4) e^{-i t}, -(m/4) e^{+i t}]``.
    """
    t1, t2, t3 = -np.asarray(phases, dtype=float)
    e = lambda x: np.exp(1j * x)
    delta = (e(t2 - t1) - e(t1 - t2) - e(t3 - t1) + e(t1 - t3) + e(t3 - t2) - e(t2 - t3))
    inv = np.array([
        [e(t3 - t2) - e(t2 - t3), e(t1 - t3) - e(t3 - t1), e(t2 - t1) - e(t1 - t2)],
        [4 / m * (e(t3) - e(t2)), 4 / m * (e(t1) - e(t3)), 4 / m * (e(t2) - e(t1))],
        [4 / m * (e(-t2) - e(-t3)), 4 / m * (e(-t3) - e(-t1)), 4 / m * (e(-t1) - e(-t2))],
    ])
    return inv, delta


def separation_matrix(phases, m=1.0, kind="standard"):
    """
    Mixing matrix and its closed-form inverse.

    :param phases: three phases in radians. For ``kind="tirf"`` these are relative phases and
      the first must be 0 (the matrix then maps to the phase-absorbed bands).
    :param float m: modulation (1 for the separation stage, the side bands then carry m)
    :param str kind: ``"standard"`` or ``"tirf"``
    :raises SingularPhasesError: if two phases coincide modulo 2 pi
    """
    if kind not in ("standard", "tirf"):
        raise ValueError(f"unknown matrix kind '{kind}'")
    if m <= 0:
        raise ValueError("m must be > 0")
    phases = np.asarray(phases, dtype=float)
    if kind == "tirf" and abs(phases[0]) > 1e-12:
        raise ValueError("tirf phases must be relative to the first (first phase 0)")
    inv, delta = _closed_form_inverse(phases, m)
    if abs(delta) < SINGULAR_TOL:
        raise SingularPhasesError(
            f"phases {np.rad2deg(phases).round(3).tolist()} deg are not pairwise distinct")
    return SeparationMatrix(mixing_matrix(phases, m), inv / delta, kind, float(m), complex(delta))


def separate_components(spectra, matrix, p=None):
    """
    Apply the inverse mixing matrix bin by bin.

    :param spectra: (3, N, N) frame spectra in phase order
    :param matrix: :class:`SeparationMatrix` or a 3 x 3 inverse
    :return: :class:`BandSet` in the ``noisy`` stage
    """
    spectra = np.asarray(spectra)
    if spectra.ndim != 3 or spectra.shape[0] != 3 or spectra.shape[1] != spectra.shape[2]:
        raise ValueError(f"expected three square spectra, got shape {spectra.shape}")
    inv = matrix.inverse if isinstance(matrix, SeparationMatrix) else np.asarray(matrix)
    bands = np.einsum("ij,jyx->iyx", inv, spectra)
    return BandSet(bands[0], bands[1], bands[2], p, "noisy")


def tirf_leakage(psi, phi_rel, m=1.0):
    """
    2 x 2 block of ``Me^-1(psi) Mo(phi_rel, m)`` that maps the true side bands onto the bands
    separated with trial phases ``psi``. The off-diagonal entries vanish at ``psi == phi_rel``.

    :param psi: trial relative phases (psi2, psi3)
    :param phi_rel: true relative phases (phi2', phi3')
    """
    me_inv = separation_matrix((0.0, *psi), 1.0, "tirf").inverse
    mo = mixing_matrix((0.0, *phi_rel), m)
    return (me_inv @ mo)[1:, 1:]


def tirf_leakage_closed_form(psi, phi_rel, m=1.0):
    """Closed form of :func:`tirf_leakage` (coefficients a22, a23, a32, a33 over Delta_e)."""
    s2, s3 = -np.asarray(psi, dtype=float)
    f2, f3 = -np.asarray(phi_rel, dtype=float)
    e = lambda x: np.exp(1j * x)
    delta = e(s2) - e(-s2) - e(s3) + e(-s3) + e(s3 - s2) - e(s2 - s3)
    a22 = e(s2) - e(-f2) - e(s3) + e(-f3) + e(s3 - f2) - e(s2 - f3)
    a23 = e(s2) - e(f2) - e(s3) + e(f3) + e(s3 + f2) - e(s2 + f3)
    a32 = e(-f2) - e(-s2) - e(-f3) + e(-s3) + e(-(f3 + s2)) - e(-(f2 + s3))
    a33 = e(f2) - e(-s2) - e(f3) + e(-s3) + e(f3 - s2) - e(f2 - s3)
    return m / delta * np.array([[a22, a23], [a32, a33]])
