"""Deterministic SBR radio-channel simulator for THz and massive MIMO."""

__version__ = "0.1.0"

from .accel import AccelStructure, build_accel
from .atmosphere import (AtmosphereState, GasLineTable, default_line_table,
                         specific_attenuation, specific_dispersion)
from .channel import (MPC, ChannelMatrix, ChannelReport, capacity,
                      channel_matrix, cir, coherent_sum, mean_angles,
                      path_loss, power_delay_profile, received_power,
                      rms_delay_spread)
from .config import SimulationConfig, load_config
from .geometry import Aabb, Hit, Material, Scene, Triangle, load_scene, save_scene_json
from .launch import ArrayGeometry, RayFan, geodesic_directions, make_array
from .propagation import (PolarizedField, er_scattering, free_space_attenuation,
                          fresnel_reflection, modified_reflection, path_field,
                          rayleigh_roughness_factor, utd_diffraction)
from .simulation import run_simulation, sweep_array, sweep_gas, write_outputs
from .tracer import (Interaction, PathRecord, TraceLimits, dedupe,
                     reception_test, trace)

__all__ = [name for name in dir() if not name.startswith("_")]
