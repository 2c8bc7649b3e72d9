"""Declarative simulation configuration (validated request models).

The same models back the JSON config files consumed by the CLI and the
request bodies of the HTTP service, so a config file can be POSTed to the
service unchanged.
"""

from __future__ import annotations

import json
from typing import Literal, Optional

from pydantic import BaseModel, Field, field_validator

from .atmosphere import AtmosphereState
from .tracer import TraceLimits


class ArraySpec(BaseModel):
    kind: Literal["ULA", "UPA"] = "ULA"
    counts: tuple[int, int] = (1, 1)
    spacing_m: Optional[float] = Field(default=None, gt=0,
                                       description="None means half a wavelength")
    center: tuple[float, float, float]
    axis_primary: tuple[float, float, float] = (1.0, 0.0, 0.0)
    axis_secondary: tuple[float, float, float] = (0.0, 0.0, 1.0)

    @field_validator("counts")
    @classmethod
    def _counts_positive(cls, v):
        if v[0] < 1 or v[1] < 1:
            raise ValueError("element counts must be >= 1")
        return v


class AtmosphereSpec(BaseModel):
    """Dry-air pressure (hPa), temperature (K), water vapour (g/m^3)."""

    pressure_hpa: float = Field(default=1013.25, gt=0)
    temperature_k: float = Field(default=288.15, gt=0)
    water_vapor_density_g_m3: float = Field(default=0.0, ge=0)

    def to_state(self) -> AtmosphereState:
        return AtmosphereState(pressure=self.pressure_hpa,
                               temperature=self.temperature_k,
                               water_vapor_density=self.water_vapor_density_g_m3)


class LimitsSpec(BaseModel):
    max_reflections: int = Field(default=3, ge=0)
    max_diffractions: int = Field(default=0, ge=0)
    max_scatterings: int = Field(default=0, ge=0)
    max_total_interactions: Optional[int] = Field(default=None, ge=0)

    def to_limits(self) -> TraceLimits:
        return TraceLimits(max_reflections=self.max_reflections,
                           max_diffractions=self.max_diffractions,
                           max_scatterings=self.max_scatterings,
                           max_total_interactions=self.max_total_interactions)


class GasSweepSpec(BaseModel):
    f_start_ghz: float = Field(default=1.0)
    f_stop_ghz: float = Field(default=1000.0)
    f_step_ghz: float = Field(default=1.0, gt=0)
    water_vapor_densities_g_m3: list[float] = Field(default=[0.0, 8.0])


class ArraySweepSpec(BaseModel):
    sizes: list[int] = Field(default=[16, 32, 64, 128])

    @field_validator("sizes")
    @classmethod
    def _sizes_positive(cls, v):
        if not v or any(n < 1 for n in v):
            raise ValueError("array sizes must be >= 1")
        return v


class SimulationConfig(BaseModel):
    """One simulation run; only the scene path and frequency lack defaults."""

    scene_path: str
    scene_format: Optional[Literal["json", "stl"]] = None
    sidecar_path: Optional[str] = None
    frequency_ghz: float = Field(gt=0.05, le=1000.0)
    tx_array: ArraySpec
    rx_array: ArraySpec
    limits: LimitsSpec = LimitsSpec()
    tessellation: int = Field(default=64, ge=1)
    atmosphere: Optional[AtmosphereSpec] = None
    beta: float = Field(default=1.0, gt=0)
    snr_db: list[float] = Field(default=[10.0])
    output_dir: str = "out"
    workers: int = Field(default=0, ge=0, description="0 = logical processor count")
    pdp_bin_ns: float = Field(default=1.0, gt=0)
    dump_paths: bool = False
    max_path_length_factor: float = Field(default=10.0, gt=0)
    gas_sweep: GasSweepSpec = GasSweepSpec()
    array_sweep: ArraySweepSpec = ArraySweepSpec()

    @field_validator("snr_db")
    @classmethod
    def _snr_finite(cls, v):
        for x in v:
            if not (-1e12 < x < 1e12):
                raise ValueError("snr entries must be finite")
        return v


def load_config(path: str) -> SimulationConfig:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return SimulationConfig.model_validate(data)
