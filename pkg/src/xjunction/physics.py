"""Physical constants, ion/drive context and unit conversions.

Lengths are in µm, voltages in V, energies in meV, curvatures in meV/µm²
and frequencies in MHz.  Everything that touches SI goes through here.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import constants as ct

CA40_MASS_AMU = 39.962591

#: 1 meV/µm² expressed in J/m² for a singly charged ion
MEV_PER_UM2_TO_SI = ct.e * 1e-3 / 1e-12


@dataclass(frozen=True)
class PhysicalContext:
    """Ion species and RF drive.

    Parameters
    ----------
    mass : float
        Ion mass in kg.
    charge : float
        Ion charge in C.
    v_rf : float
        Peak RF amplitude in V.
    omega_rf : float
        RF angular frequency in rad/s.
    """

    mass: float = CA40_MASS_AMU * ct.atomic_mass
    charge: float = ct.e
    v_rf: float = 40.0
    omega_rf: float = 2 * np.pi * 40e6

    def __post_init__(self):
        for name in ("mass", "charge", "v_rf", "omega_rf"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    @classmethod
    def calcium40(cls, v_rf: float = 40.0, f_rf_mhz: float = 40.0) -> "PhysicalContext":
        return cls(v_rf=v_rf, omega_rf=2 * np.pi * f_rf_mhz * 1e6)

    @property
    def f_rf_mhz(self) -> float:
        return self.omega_rf / (2 * np.pi) / 1e6

    @property
    def pp_prefactor(self) -> float:
        """meV·µm²: phi_pp [meV] = pp_prefactor * |grad Theta_RF|² [1/µm²]."""
        q, m = self.charge, self.mass
        joules_m2 = q**2 * self.v_rf**2 / (4 * m * self.omega_rf**2)
        return joules_m2 / ct.e * 1e3 * 1e12

    @property
    def energy_per_volt(self) -> float:
        """meV of potential energy per volt of electrostatic potential."""
        return self.charge / ct.e * 1e3

    def curvature_to_si(self, k):
        """meV/µm² -> J/m²."""
        return np.asarray(k) * MEV_PER_UM2_TO_SI

    def frequency_to_curvature(self, f_mhz):
        """Harmonic curvature (meV/µm²) giving secular frequency ``f_mhz``."""
        w = 2 * np.pi * np.asarray(f_mhz, dtype=float) * 1e6
        return self.mass * w**2 / MEV_PER_UM2_TO_SI

    def curvature_to_frequency(self, k):
        """Secular frequency in MHz for curvature ``k`` in meV/µm².

        Non-positive curvatures map to nan (no bound motion).
        """
        k = np.asarray(k, dtype=float)
        with np.errstate(invalid="ignore"):
            f = np.sqrt(k * MEV_PER_UM2_TO_SI / self.mass) / (2 * np.pi) / 1e6
        return np.where(k > 0, f, np.nan)

    def to_dict(self) -> dict:
        return {
            "mass_amu": self.mass / ct.atomic_mass,
            "charge_e": self.charge / ct.e,
            "v_rf": self.v_rf,
            "f_rf_mhz": self.f_rf_mhz,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhysicalContext":
        return cls(
            mass=d.get("mass_amu", CA40_MASS_AMU) * ct.atomic_mass,
            charge=d.get("charge_e", 1.0) * ct.e,
            v_rf=d.get("v_rf", 40.0),
            omega_rf=2 * np.pi * d.get("f_rf_mhz", 40.0) * 1e6,
        )


DEFAULT_CONTEXT = PhysicalContext()
