"""Channel observables: CIR, delay spread, angle statistics, MIMO capacity.

Angle conventions: azimuth is ``atan2(y, x)`` in degrees, elevation is the
angle above the xy-plane.  Departure angles describe the launch direction
at the transmitter; arrival angles describe the direction the wave comes
*from* as seen by the receiver.

Per-path phases are reported from the co-polarised (theta) field
component; received power always uses the full polarimetric vector sum.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import UndefinedValueError
from .propagation import FREE_SPACE_IMPEDANCE, PolarizedField

MERGE_TOLERANCE_S = 1e-12  # CIR taps closer than 1 ps merge coherently


@dataclass(frozen=True)
class MPC:
    """One resolvable multipath component."""

    amplitude: float   # V/m for the unit launch field
    delay: float       # seconds
    phase: float       # radians, tap value is amplitude * e^{-j phase}
    aod: tuple[float, float]  # (azimuth, elevation) degrees at the transmitter
    aoa: tuple[float, float]  # (azimuth, elevation) degrees at the receiver
    tx_index: int = 0
    rx_index: int = 0


@dataclass(frozen=True)
class CIRTap:
    delay: float
    value: complex
    cancelled: bool = False  # equal-amplitude opposite-phase merge left ~0

    @property
    def magnitude(self) -> float:
        return abs(self.value)


@dataclass(frozen=True)
class ChannelMatrix:
    entries: np.ndarray  # (n_rx, n_tx) complex
    frequency_hz: float

    @property
    def shape(self):
        return self.entries.shape


@dataclass
class ChannelReport:
    frequency_ghz: float
    path_count: int
    path_loss_db: float | None  # None when the pair is fully blocked
    rms_delay_spread_s: float | None
    mean_aod_deg: tuple[float, float] | None
    mean_aoa_deg: tuple[float, float] | None
    pdp: list[tuple[float, float]]  # (delay s, power) with nondecreasing delays
    capacity_bits_per_s_per_hz: dict[float, float] = field(default_factory=dict)


def direction_angles(direction) -> tuple[float, float]:
    """(azimuth, elevation) in degrees of a unit direction vector."""
    x, y, z = float(direction[0]), float(direction[1]), float(direction[2])
    az = math.degrees(math.atan2(y, x))
    el = math.degrees(math.asin(max(-1.0, min(1.0, z))))
    return az, el


def coherent_sum(fields: list[PolarizedField]) -> float:
    """Magnitude of the complex vector sum of the arriving fields."""
    if not fields:
        return 0.0
    e_theta = sum(f.e_theta for f in fields)
    e_phi = sum(f.e_phi for f in fields)
    return math.hypot(abs(e_theta), abs(e_phi))


def coherent_sum_complex(fields: list[PolarizedField]) -> complex:
    """Co-polarised complex sum used for the channel-matrix phase."""
    if not fields:
        return 0.0j
    e_theta = sum(f.e_theta for f in fields)
    e_phi = sum(f.e_phi for f in fields)
    if abs(e_theta) < 1e-12 * abs(e_phi):
        return e_phi
    return e_theta


def received_power(er: float, wavelength: float, beta: float = 1.0) -> float:
    """Total received power in watts from the summed field magnitude."""
    if er < 0:
        raise ValueError("field magnitude must be >= 0")
    if beta <= 0:
        raise ValueError("beta must be positive")
    return wavelength**2 * beta / (8.0 * math.pi * FREE_SPACE_IMPEDANCE) * er**2


def cir(mpcs: list[MPC]) -> list[CIRTap]:
    """Sparse complex tap list sorted by delay; taps within 1 ps merge."""
    if not mpcs:
        return []
    items = sorted(mpcs, key=lambda m: m.delay)
    taps: list[CIRTap] = []
    group_delay = items[0].delay
    group_value = 0.0j
    group_peak = 0.0

    def flush():
        cancelled = group_peak > 0 and abs(group_value) < 1e-9 * group_peak
        taps.append(CIRTap(delay=group_delay, value=group_value, cancelled=cancelled))

    for m in items:
        value = m.amplitude * cmath.exp(-1j * m.phase)
        if m.delay - group_delay > MERGE_TOLERANCE_S:
            flush()
            group_delay, group_value, group_peak = m.delay, value, abs(value)
        else:
            group_value += value
            group_peak = max(group_peak, abs(value))
    flush()
    return taps


def rms_delay_spread(mpcs: list[MPC]) -> float:
    """Power-weighted standard deviation of the path delays."""
    if not mpcs:
        raise UndefinedValueError("delay spread undefined for an empty path set")
    powers = np.array([m.amplitude**2 for m in mpcs])
    delays = np.array([m.delay for m in mpcs])
    total = powers.sum()
    if total <= 0:
        raise UndefinedValueError("delay spread undefined for zero total power")
    mean = float((powers * delays).sum() / total)
    # centred form: immune to the cancellation of E[t^2] - E[t]^2
    return math.sqrt(float((powers * (delays - mean) ** 2).sum() / total))


def mean_angles(mpcs: list[MPC]):
    """Power-weighted mean (AoD, AoA); azimuths use the circular mean."""
    if not mpcs:
        raise UndefinedValueError("mean angles undefined for an empty path set")
    powers = np.array([m.amplitude**2 for m in mpcs])
    total = powers.sum()
    if total <= 0:
        raise UndefinedValueError("mean angles undefined for zero total power")

    def average(pairs):
        az = np.radians(np.array([p[0] for p in pairs]))
        el = np.array([p[1] for p in pairs])
        mean_az = math.degrees(math.atan2(float((powers * np.sin(az)).sum()),
                                          float((powers * np.cos(az)).sum())))
        mean_el = float((powers * el).sum() / total)
        return mean_az, mean_el

    return (average([m.aod for m in mpcs]), average([m.aoa for m in mpcs]))


def channel_matrix(pair_powers: np.ndarray, pair_phases: np.ndarray,
                   frequency_hz: float) -> ChannelMatrix:
    """Entries sqrt(P_qp) * e^{j theta_qp} from the per-pair results."""
    powers = np.asarray(pair_powers, dtype=np.float64)
    phases = np.asarray(pair_phases, dtype=np.float64)
    if powers.ndim != 2 or powers.shape != phases.shape:
        raise ValueError("power and phase grids must share an (n_rx, n_tx) shape")
    entries = np.sqrt(powers) * np.exp(1j * phases)
    return ChannelMatrix(entries=entries, frequency_hz=frequency_hz)


def capacity(matrix: ChannelMatrix | np.ndarray, snr: float) -> float:
    """Shannon capacity in bits/s/Hz at the given linear SNR.

    The matrix is Frobenius-normalised (H~ = H * sqrt(Nt*Nr / sum|h|^2))
    so capacity is invariant to the absolute transmit units and the SISO
    case collapses to log2(1 + snr); the Gram matrix is formed on the
    smaller side of H.
    """
    if snr < 0:
        raise ValueError("snr must be >= 0")
    h = matrix.entries if isinstance(matrix, ChannelMatrix) else np.asarray(matrix)
    if h.ndim != 2:
        raise ValueError("channel matrix must be 2-D")
    n_rx, n_tx = h.shape
    q = float(np.sum(np.abs(h) ** 2))
    if q <= 0:
        raise UndefinedValueError("capacity undefined for an all-zero channel matrix")
    h_norm = h * math.sqrt(n_tx * n_rx / q)
    if n_tx >= n_rx:
        gram = h_norm @ h_norm.conj().T
    else:
        gram = h_norm.conj().T @ h_norm
    eigvals = np.linalg.eigvalsh(gram)
    eigvals = np.clip(eigvals.real, 0.0, None)
    return float(np.log2(1.0 + snr / n_tx * eigvals).sum())


def path_loss(reference_power: float, received: float) -> float:
    """Loss in dB between the launch reference power and the received power."""
    if reference_power <= 0:
        raise ValueError("reference power must be positive")
    if received < 0:
        raise ValueError("received power must be >= 0")
    if received == 0:
        return math.inf
    return -10.0 * math.log10(received / reference_power)


def power_delay_profile(mpcs: list[MPC], bin_width_s: float = 1e-9):
    """Binned (delay, power) pairs; powers are squared tap amplitudes."""
    if bin_width_s <= 0:
        raise ValueError("bin width must be positive")
    if not mpcs:
        return []
    bins: dict[int, float] = {}
    for m in mpcs:
        bins[int(m.delay // bin_width_s)] = bins.get(int(m.delay // bin_width_s), 0.0) \
            + m.amplitude**2
    return [(idx * bin_width_s, bins[idx]) for idx in sorted(bins)]
