"""
Illumination and object-prior parameters shared by the estimators and the reconstruction.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from .imagecore import FrequencyVector


@dataclass
class OrientationParams:
    """
    Parameters of one pattern orientation.

    :ivar p: pattern frequency in cycles/pixel
    :ivar phases: three phases in radians; absolute for the standard pipeline, relative
      ``(0, phi2 - phi1, phi3 - phi1)`` for the TIRF pipeline
    :ivar m: modulation
    :ivar psi_o: noise power of the central band
    :ivar psi_p: noise power of the ``S(k - p)H`` band
    :ivar psi_q: noise power of the ``S(k + p)H`` band
    :ivar phase_kind: ``"absolute"`` or ``"relative"``
    :ivar phi_c: corrective phase applied during phase matching (diagnostic)
    """
    p: FrequencyVector
    phases: tuple
    m: float = 1.0
    psi_o: float = 0.0
    psi_p: float = 0.0
    psi_q: float = 0.0
    phase_kind: str = "absolute"
    phi_c: float = 0.0

    def __post_init__(self):
        self.p = FrequencyVector(float(self.p[0]), float(self.p[1]))
        self.phases = tuple(float(v) for v in self.phases)
        if len(self.phases) != 3:
            raise ValueError("three phases required per orientation")
        if min(self.psi_o, self.psi_p, self.psi_q) < 0:
            raise ValueError("noise powers must be >= 0")

    def to_json(self):
        return {"p": [self.p.fx, self.p.fy],
                "phases_deg": [float(np.rad2deg(v)) for v in self.phases],
                "phase_kind": self.phase_kind,
                "m": float(self.m),
                "psi": {"o": float(self.psi_o), "p": float(self.psi_p), "q": float(self.psi_q)},
                "phi_c_deg": float(np.rad2deg(self.phi_c))}

    @classmethod
    def from_json(cls, d):
        psi = d.get("psi", {})
        return cls(FrequencyVector(*d["p"]), tuple(np.deg2rad(d["phases_deg"])), d.get("m", 1.0),
                   psi.get("o", 0.0), psi.get("p", 0.0), psi.get("q", 0.0),
                   d.get("phase_kind", "absolute"), np.deg2rad(d.get("phi_c_deg", 0.0)))


@dataclass
class IlluminationParams:
    """
    Everything the band filtering and merge need: per-orientation pattern parameters and the
    object power-spectrum prior ``A^2 |k|^(-2 alpha)``.
    """
    orientations: list = field(default_factory=list)
    A: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")

    def __getitem__(self, i):
        return self.orientations[i]

    def __len__(self):
        return len(self.orientations)

    def with_orientation(self, i, **changes):
        orients = list(self.orientations)
        orients[i] = replace(orients[i], **changes)
        return replace(self, orientations=orients)

    def to_json(self):
        return {"per_orientation": [o.to_json() for o in self.orientations],
                "A": float(self.A), "alpha": float(self.alpha)}

    @classmethod
    def from_json(cls, d):
        return cls([OrientationParams.from_json(o) for o in d["per_orientation"]],
                   d.get("A", 1.0), d.get("alpha", 1.0))


def object_power(k, A, alpha, k_min):
    """``A^2 |k|^(-2 alpha)`` with ``|k|`` clamped at ``k_min`` to keep the DC bin finite."""
    return A * A * np.maximum(k, k_min) ** (-2.0 * alpha)
