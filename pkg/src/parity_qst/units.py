"""Conversion between dimensionless kernel units and laboratory units.

Kernels work with hbar = 1 and every frequency in units of the cavity
frequency.  Only the reporting layer touches kelvin, hertz or seconds.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import pi

from scipy import constants

K_B = constants.k
HBAR = constants.hbar


@dataclass(frozen=True)
class PhysicalScale:
    """Cavity frequency ``omega_cav = 2*pi*cavity_ghz*1e9`` rad/s."""

    cavity_ghz: float = 8.13

    @property
    def omega_cav(self) -> float:
        return 2 * pi * self.cavity_ghz * 1e9

    def theta(self, temperature_k: float) -> float:
        """Reduced temperature k_B T / (hbar omega_cav)."""
        if temperature_k < 0:
            raise ValueError("temperature must be non-negative")
        return K_B * temperature_k / (HBAR * self.omega_cav)

    def temperature(self, theta: float) -> float:
        return theta * HBAR * self.omega_cav / K_B

    def rate(self, mhz_over_2pi: float) -> float:
        """Dimensionless rate for a decay rate quoted as ``Gamma/2pi`` in MHz."""
        return 2 * pi * mhz_over_2pi * 1e6 / self.omega_cav

    def to_ns(self, t: float) -> float:
        return t / self.omega_cav * 1e9

    def from_ns(self, t_ns: float) -> float:
        return t_ns * 1e-9 * self.omega_cav
