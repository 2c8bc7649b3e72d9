"""Line-by-line gaseous attenuation and dispersion (1-1000 GHz).

The model sums the complex refractivity contributions of the individual
oxygen and water-vapour resonance lines (Van Vleck-Weisskopf shape with
interference correction), plus the non-resonant Debye and pressure-induced
nitrogen continua of dry air:

* specific attenuation  gamma = 0.1820 * f * N''(f)   [dB/km]
* specific dispersion   phi   = -1.2008 * f * N'(f)   [deg/km]

with f in GHz and N', N'' the real/imaginary parts of the
frequency-dependent complex refractivity in ppm.  Spectroscopic
coefficients ship in ``data/itu_p676_lines.csv``.

``AtmosphereState.pressure`` is the dry-air partial pressure: water vapour
enters only through ``water_vapor_density``, so adding humidity never
lowers the dry-air term.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import FrequencyRangeError, SceneValidationError

FREQ_MIN_GHZ = 1.0
FREQ_MAX_GHZ = 1000.0

_ATTEN_PREFACTOR = 0.1820  # dB/km per (GHz * ppm)
_DISP_PREFACTOR = -1.2008  # deg/km per (GHz * ppm)


@dataclass(frozen=True)
class AtmosphereState:
    """Dry-air pressure (hPa), temperature (K), water-vapour density (g/m^3)."""

    pressure: float = 1013.25
    temperature: float = 288.15
    water_vapor_density: float = 0.0

    def __post_init__(self):
        if self.pressure <= 0:
            raise SceneValidationError("pressure must be > 0 hPa")
        if self.temperature <= 0:
            raise SceneValidationError("temperature must be > 0 K")
        if self.water_vapor_density < 0:
            raise SceneValidationError("water_vapor_density must be >= 0")
        if self.pressure > 1100:
            warnings.warn(f"pressure {self.pressure} hPa outside physical range",
                          stacklevel=2)
        if not 150 <= self.temperature <= 350:
            warnings.warn(f"temperature {self.temperature} K outside physical range",
                          stacklevel=2)

    @property
    def water_vapor_pressure(self) -> float:
        """Partial pressure of water vapour, hPa."""
        return self.water_vapor_density * self.temperature / 216.7


class GasLineTable:
    """Oxygen and water-vapour resonance-line coefficients."""

    def __init__(self, oxygen: np.ndarray, water: np.ndarray):
        self.oxygen = oxygen  # (n, 7): f0, a1..a6
        self.water = water    # (m, 7): f0, b1..b6
        for name, block in (("oxygen", oxygen), ("water", water)):
            if np.any(np.diff(block[:, 0]) <= 0):
                raise SceneValidationError(f"{name} line centres must be strictly increasing")
        # the low band relies on the 50-70 GHz oxygen complex and the
        # 22.235 GHz water line being present
        if self.oxygen[0, 0] > 60.0 or self.water[0, 0] > 25.0:
            raise SceneValidationError("line table does not cover the validity range")

    @classmethod
    def from_csv(cls, path_or_file) -> "GasLineTable":
        rows = {"oxygen": [], "water": []}
        if hasattr(path_or_file, "read"):
            reader = csv.reader(path_or_file)
            raw = list(reader)
        else:
            with open(path_or_file, "r", encoding="utf-8") as fh:
                raw = list(csv.reader(fh))
        for row in raw:
            if not row or row[0].startswith("#"):
                continue
            species = row[0].strip()
            if species not in rows:
                raise SceneValidationError(f"unknown species {species!r} in line table")
            rows[species].append([float(x) for x in row[1:8]])
        return cls(np.asarray(rows["oxygen"]), np.asarray(rows["water"]))


_DEFAULT_TABLE: GasLineTable | None = None


def default_line_table() -> GasLineTable:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        ref = resources.files("thzray").joinpath("data/itu_p676_lines.csv")
        with ref.open("r", encoding="utf-8") as fh:
            _DEFAULT_TABLE = GasLineTable.from_csv(fh)
    return _DEFAULT_TABLE


def _line_shape(f, f0, df, delta):
    """Complex line-shape factor; returns (real, imag) parts."""
    below = f0 - f
    above = f0 + f
    d_below = below * below + df * df
    d_above = above * above + df * df
    imag = (f / f0) * ((df - delta * below) / d_below + (df - delta * above) / d_above)
    real = (f / f0) * ((below + delta * df) / d_below - (above + delta * df) / d_above)
    return real, imag


def complex_refractivity(f_ghz, atm: AtmosphereState,
                         table: GasLineTable | None = None):
    """Frequency-dependent complex refractivity (N', N'') in ppm.

    Vectorised over ``f_ghz``.  Only the dispersive part is returned; the
    frequency-independent refractivity offset is irrelevant for both
    attenuation and excess-phase computation here.
    """
    table = table or default_line_table()
    f = np.atleast_1d(np.asarray(f_ghz, dtype=np.float64))
    theta = 300.0 / atm.temperature
    p = atm.pressure
    e = atm.water_vapor_pressure

    ox = table.oxygen
    f0 = ox[:, 0]
    strength = ox[:, 1] * 1e-7 * p * theta**3 * np.exp(ox[:, 2] * (1.0 - theta))
    width = ox[:, 3] * 1e-4 * (p * theta ** (0.8 - ox[:, 4]) + 1.1 * e * theta)
    width = np.sqrt(width**2 + 2.25e-6)  # Zeeman / Doppler floor
    delta = (ox[:, 5] + ox[:, 6] * theta) * 1e-4 * (p + e) * theta**0.8
    re, im = _line_shape(f[:, None], f0, width, delta)
    n_re = (strength * re).sum(axis=1)
    n_im = (strength * im).sum(axis=1)

    # Dry continuum: Debye relaxation plus pressure-induced nitrogen.
    d = 5.6e-4 * (p + e) * theta**0.8
    so = 6.14e-5 * p * theta**2
    n_im = n_im + f * p * theta**2 * (
        6.14e-5 / (d * (1.0 + (f / d) ** 2))
        + 1.4e-12 * p * theta**1.5 / (1.0 + 1.9e-5 * f**1.5)
    )
    n_re = n_re + so * f**2 / (f**2 + d**2)

    wa = table.water
    f0w = wa[:, 0]
    strength_w = wa[:, 1] * 1e-1 * e * theta**3.5 * np.exp(wa[:, 2] * (1.0 - theta))
    width_w = wa[:, 3] * 1e-4 * (p * theta ** wa[:, 4] + wa[:, 5] * e * theta ** wa[:, 6])
    width_w = 0.535 * width_w + np.sqrt(0.217 * width_w**2 + 2.1316e-12 * f0w**2 / theta)
    re_w, im_w = _line_shape(f[:, None], f0w, width_w, 0.0)
    n_re = n_re + (strength_w * re_w).sum(axis=1)
    n_im = n_im + (strength_w * im_w).sum(axis=1)
    return n_re, n_im


def _check_range(f):
    f = np.atleast_1d(np.asarray(f, dtype=np.float64))
    if np.any(f < FREQ_MIN_GHZ) or np.any(f > FREQ_MAX_GHZ):
        raise FrequencyRangeError(
            f"frequency must lie in [{FREQ_MIN_GHZ}, {FREQ_MAX_GHZ}] GHz"
        )
    return f


def specific_attenuation(f_ghz, atm: AtmosphereState,
                         table: GasLineTable | None = None):
    """Gas attenuation in dB/km; scalar in, scalar out."""
    f = _check_range(f_ghz)
    _, n_im = complex_refractivity(f, atm, table)
    gamma = _ATTEN_PREFACTOR * f * n_im
    return float(gamma[0]) if np.isscalar(f_ghz) else gamma


def specific_dispersion(f_ghz, atm: AtmosphereState,
                        table: GasLineTable | None = None):
    """Gas dispersion in degrees/km; scalar in, scalar out."""
    f = _check_range(f_ghz)
    n_re, _ = complex_refractivity(f, atm, table)
    phi = _DISP_PREFACTOR * f * n_re
    return float(phi[0]) if np.isscalar(f_ghz) else phi
