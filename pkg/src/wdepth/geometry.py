"""Gaussian-beam interaction volume and the number of atoms it contains."""

from __future__ import annotations

import math
from dataclasses import dataclass

C_LIGHT = 299_792_458.0
RAYLEIGH_CONSISTENCY = 0.01


def rayleigh_length(beam_waist: float, wavelength: float) -> float:
    if beam_waist < 0 or wavelength <= 0:
        raise ValueError("beam waist must be >= 0 and wavelength > 0")
    return math.pi * beam_waist**2 / wavelength


@dataclass(frozen=True)
class EnsembleGeometry:
    """Beam and cell dimensions in metres.

    ``rayleigh_length`` defaults to the value derived from waist and
    wavelength; a supplied value overrides it and is flagged when it differs
    from the derived one by more than 1 %.
    """

    beam_waist: float
    wavelength: float
    cell_length: float
    rayleigh_length: float | None = None

    def __post_init__(self):
        for name in ("beam_waist", "wavelength", "cell_length"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.rayleigh_length is not None and not self.rayleigh_length > 0:
            raise ValueError("rayleigh_length must be positive")

    @property
    def derived_rayleigh_length(self) -> float:
        return rayleigh_length(self.beam_waist, self.wavelength)

    @property
    def z_w(self) -> float:
        if self.rayleigh_length is None:
            return self.derived_rayleigh_length
        return self.rayleigh_length

    @property
    def provenance(self) -> dict:
        derived = self.derived_rayleigh_length
        if self.rayleigh_length is None:
            return {"rayleigh_length_m": derived, "rayleigh_source": "derived"}
        rel = abs(self.rayleigh_length - derived) / derived
        return {
            "rayleigh_length_m": self.rayleigh_length,
            "rayleigh_source": "user",
            "derived_rayleigh_length_m": derived,
            "rayleigh_relative_mismatch": rel,
            "rayleigh_inconsistent": rel > RAYLEIGH_CONSISTENCY,
        }

    @classmethod
    def from_dict(cls, cfg: dict) -> "EnsembleGeometry":
        """Build from a JSON config with SI-suffixed keys.

        Either ``wavelength_m`` or ``transition_frequency_hz`` must be present.
        """
        if "wavelength_m" in cfg:
            wavelength = float(cfg["wavelength_m"])
        elif "transition_frequency_hz" in cfg:
            wavelength = C_LIGHT / float(cfg["transition_frequency_hz"])
        else:
            raise KeyError("wavelength_m")
        z = cfg.get("rayleigh_length_m")
        return cls(
            beam_waist=float(cfg["beam_waist_m"]),
            wavelength=wavelength,
            cell_length=float(cfg["cell_length_m"]),
            rayleigh_length=None if z is None else float(z),
        )


def interaction_volume(geom: EnsembleGeometry) -> float:
    """Volume inside the 1/10-amplitude contour of the beam along the cell.

    The contour radius squared is ``ln10 W^2 (1 + z^2/z_w^2)``; integrating
    its area over the cell centred on the waist gives the closed form.
    """
    w2, length, z_w = geom.beam_waist**2, geom.cell_length, geom.z_w
    return math.pi * math.log(10.0) * w2 * length * (1.0 + length**2 / (12.0 * z_w**2))


def atom_number(density: float, volume: float) -> float:
    if density < 0 or volume < 0:
        raise ValueError("density and volume must be non-negative")
    return density * volume
