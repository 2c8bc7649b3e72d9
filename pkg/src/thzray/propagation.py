"""Per-interaction electromagnetic coefficients and per-path fields.

Conventions (used consistently across the package):

* time dependence ``e^{+j omega t}``; propagation phase ``e^{-j k d}``;
* complex relative permittivity ``eps' - j eps''`` with ``eps'' >= 0``;
* TE means the electric field perpendicular to the incidence plane,
  TM parallel to it;
* the TM Fresnel coefficient follows the convention in which both
  coefficients coincide at normal incidence with value
  ``(1 - sqrt(eps)) / (1 + sqrt(eps))`` and the TM grazing limit is +1;
* polarisation is transported on right-handed transverse bases
  ``(b1, b2, dir)``; on such bases the parallel (TM) component picks up
  the *negative* of the conventional coefficient, which is handled here.

The free-space factor is ``lambda / (4 pi d) * e^{-j k d}`` over the
unfolded path length, which together with the received-power formula of
the channel module reproduces the Friis loss for line of sight.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import fresnel as _fresnel_integrals

from .atmosphere import AtmosphereState, GasLineTable, specific_attenuation, specific_dispersion
from .errors import DegenerateGeometryError
from .geometry import Material
from .tracer import PathRecord

SPEED_OF_LIGHT = 299792458.0  # m/s
FREE_SPACE_IMPEDANCE = 376.730313668  # ohm


@dataclass(frozen=True)
class PolarizedField:
    """Transverse field on the spherical basis of its propagation direction."""

    e_theta: complex
    e_phi: complex
    direction: tuple[float, float, float]

    @property
    def magnitude(self) -> float:
        return math.hypot(abs(self.e_theta), abs(self.e_phi))


def spherical_basis(direction: np.ndarray):
    """Right-handed transverse unit vectors (theta_hat, phi_hat) for a direction."""
    d = np.asarray(direction, dtype=np.float64)
    phi_hat = np.array([-d[1], d[0], 0.0])
    norm = np.linalg.norm(phi_hat)
    if norm < 1e-12:  # propagation along +-z: pick a fixed transverse frame
        phi_hat = np.array([0.0, 1.0, 0.0])
    else:
        phi_hat = phi_hat / norm
    theta_hat = np.cross(phi_hat, d)
    return theta_hat, phi_hat


# ---------------------------------------------------------------------------
# surface coefficients


def fresnel_reflection(eps_r: complex, theta_i: float, pol: str) -> complex:
    """Air-to-material Fresnel reflection coefficient for TE or TM.

    At grazing incidence (theta_i = pi/2) the limits are -1 for TE and +1
    for TM under the sign convention of this module.
    """
    if not 0.0 <= theta_i <= math.pi / 2:
        raise ValueError("theta_i must lie in [0, pi/2]")
    cos_t = math.cos(theta_i)
    sin2 = math.sin(theta_i) ** 2
    root = cmath.sqrt(eps_r - sin2)
    pol = pol.upper()
    if pol == "TE":
        return (cos_t - root) / (cos_t + root)
    if pol == "TM":
        return (root - eps_r * cos_t) / (root + eps_r * cos_t)
    raise ValueError(f"pol must be 'TE' or 'TM', got {pol!r}")


def rayleigh_roughness_factor(sigma: float, theta_i: float, wavelength: float) -> float:
    """Specular attenuation of a rough surface, exp(-g/2) with
    g = (4 pi sigma cos(theta_i) / lambda)^2."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    g = (4.0 * math.pi * sigma * math.cos(theta_i) / wavelength) ** 2
    return math.exp(-0.5 * g)


def modified_reflection(eps_r: complex, theta_i: float, pol: str,
                        sigma: float, wavelength: float) -> complex:
    """Fresnel coefficient scaled by the Rayleigh roughness factor."""
    return rayleigh_roughness_factor(sigma, theta_i, wavelength) * fresnel_reflection(
        eps_r, theta_i, pol)


def specular_energy_factor(scattering_coeff: float) -> float:
    """Amplitude kept by the specular component when a fraction S of the
    amplitude feeds the diffuse lobe; keeps reflection + scattering passive."""
    return math.sqrt(max(0.0, 1.0 - scattering_coeff * scattering_coeff))


def er_scattering(scattering_coeff: float, lobe_width: int, incident_dir,
                  scattered_dir, surface_normal, patch_area: float,
                  r_in: float, r_out: float) -> float:
    """Directive-lobe diffuse amplitude factor of a surface patch.

    Returns K such that the scattered field at the receiver equals the
    incident field at the patch times K; the lobe peaks along the specular
    direction and the normalisation keeps the power scattered into the
    hemisphere at most S^2 times the power intercepted by the patch.
    """
    if not 0.0 <= scattering_coeff <= 1.0:
        raise ValueError("scattering_coeff must lie in [0, 1]")
    if lobe_width < 1 or int(lobe_width) != lobe_width:
        raise ValueError("lobe_width must be a positive integer")
    if r_out <= 0 or r_in <= 0:
        raise DegenerateGeometryError("patch distances must be positive")
    if scattering_coeff == 0.0:
        return 0.0
    inc = np.asarray(incident_dir, dtype=np.float64)
    out = np.asarray(scattered_dir, dtype=np.float64)
    n = np.asarray(surface_normal, dtype=np.float64)
    spec = inc - 2.0 * float(np.dot(inc, n)) * n
    cos_psi = min(1.0, max(-1.0, float(np.dot(spec, out))))
    lobe = ((1.0 + cos_psi) / 2.0) ** (lobe_width / 2.0)
    cos_inc = abs(float(np.dot(inc, n)))
    geom = math.sqrt(patch_area * cos_inc * (lobe_width + 1) / (4.0 * math.pi))
    return scattering_coeff * lobe * geom / r_out


# ---------------------------------------------------------------------------
# wedge diffraction


def transition_function(x: float) -> complex:
    """UTD Fresnel transition function F(x) for x >= 0; F(inf) -> 1."""
    if x < 0:
        raise ValueError("x must be >= 0")
    if x > 1e9:
        return 1.0 + 0.0j
    u = math.sqrt(2.0 * x / math.pi)
    s_int, c_int = _fresnel_integrals(u)
    tail = math.sqrt(math.pi / 2.0) * complex(0.5 - c_int, -(0.5 - s_int))
    return 2.0j * math.sqrt(x) * cmath.exp(1j * x) * tail


def _cot_transition_term(beta: float, sign: float, n: float, k_l: float) -> complex:
    """One cotangent/transition product of the wedge coefficient, with the
    finite shadow-boundary limit substituted near its singularity."""
    big_n = round((beta + sign * math.pi) / (2.0 * math.pi * n))
    a = 2.0 * math.cos((2.0 * math.pi * n * big_n - beta) / 2.0) ** 2
    arg = (math.pi + sign * beta) / (2.0 * n)
    sin_arg = math.sin(arg)
    if abs(sin_arg) > 1e-6:
        return (math.cos(arg) / sin_arg) * transition_function(k_l * a)
    eps = math.pi + sign * beta - sign * 2.0 * math.pi * n * big_n
    root = math.sqrt(2.0 * math.pi * k_l)
    e4 = cmath.exp(1j * math.pi / 4.0)
    return n * e4 * (root * math.copysign(1.0, eps) - 2.0 * k_l * eps * e4)


def utd_diffraction(wedge_interior_angle: float, phi_incident: float,
                    phi_observed: float, beta0: float, s_incident: float,
                    s_observed: float, wavelength: float, pol: str):
    """Wedge diffraction coefficient D and spherical spreading factor A.

    The wedge is described by its material interior angle; the exterior
    (propagation) region spans ``n * pi`` with
    ``n = (2 pi - interior) / pi``.  ``phi_incident``/``phi_observed`` are
    measured from the o-face inside the exterior region; ``beta0`` is the
    oblique angle between ray and edge.  ``pol`` is ``"soft"`` (E parallel
    to the edge) or ``"hard"``.  Transition-function limits keep the
    result finite on shadow and reflection boundaries.

    Scalar composition: the diffracted field at the observer equals
    ``E(Q) * D * A * e^{-j k s_observed}`` where E(Q) is the incident
    field at the edge point.
    """
    if not 0.0 < wedge_interior_angle < 2.0 * math.pi:
        raise ValueError("wedge interior angle must lie in (0, 2 pi)")
    if s_incident <= 0 or s_observed <= 0:
        raise ValueError("wedge distances must be positive")
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    pol = pol.lower()
    if pol not in ("soft", "hard"):
        raise ValueError("pol must be 'soft' or 'hard'")
    n = (2.0 * math.pi - wedge_interior_angle) / math.pi
    k = 2.0 * math.pi / wavelength
    sin_b = math.sin(beta0)
    if sin_b < 1e-9:
        raise DegenerateGeometryError("ray runs along the edge")
    big_l = s_incident * s_observed / (s_incident + s_observed) * sin_b * sin_b
    k_l = k * big_l
    diff = phi_observed - phi_incident
    summ = phi_observed + phi_incident
    d1 = _cot_transition_term(diff, +1.0, n, k_l)
    d2 = _cot_transition_term(diff, -1.0, n, k_l)
    d3 = _cot_transition_term(summ, +1.0, n, k_l)
    d4 = _cot_transition_term(summ, -1.0, n, k_l)
    prefactor = -cmath.exp(-1j * math.pi / 4.0) / (
        2.0 * n * math.sqrt(2.0 * math.pi * k) * sin_b)
    if pol == "soft":
        d = prefactor * (d1 + d2 - (d3 + d4))
    else:
        d = prefactor * (d1 + d2 + (d3 + d4))
    spreading = math.sqrt(s_incident / (s_observed * (s_incident + s_observed)))
    return d, spreading


# ---------------------------------------------------------------------------
# free space and full path evaluation


def free_space_attenuation(distance: float, wavelength: float) -> complex:
    """Spherical spreading amplitude and propagation phase over a distance."""
    if distance <= 0:
        raise DegenerateGeometryError("free-space distance must be positive")
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    amp = wavelength / (4.0 * math.pi * distance)
    return amp * cmath.exp(-2j * math.pi * distance / wavelength)


def _atmospheric_factor(distance: float, frequency_hz: float,
                        atmosphere: AtmosphereState | None,
                        table: GasLineTable | None) -> complex:
    if atmosphere is None:
        return 1.0 + 0.0j
    f_ghz = frequency_hz / 1e9
    gamma = specific_attenuation(f_ghz, atmosphere, table)
    phi = specific_dispersion(f_ghz, atmosphere, table)
    d_km = distance / 1000.0
    # phi < 0 corresponds to excess delay, i.e. extra negative phase.
    return 10.0 ** (-gamma * d_km / 20.0) * cmath.exp(1j * math.radians(phi) * d_km)


def _reflection_coefficients(material: Material, theta_i: float,
                             frequency_hz: float, wavelength: float):
    """(perpendicular, parallel) coefficients on right-handed bases."""
    eps = material.complex_permittivity(frequency_hz)
    rho = rayleigh_roughness_factor(material.roughness_sigma, theta_i, wavelength)
    keep = specular_energy_factor(material.scattering_coeff)
    r_te = fresnel_reflection(eps, theta_i, "TE")
    r_tm = fresnel_reflection(eps, theta_i, "TM")
    return keep * rho * r_te, keep * rho * (-r_tm)


def _segment_directions(path: PathRecord) -> list[np.ndarray]:
    dirs = [np.asarray(path.departure_dir, dtype=np.float64)]
    pts = [np.asarray(i.point, dtype=np.float64) for i in path.interactions]
    for i in range(len(pts) - 1):
        seg = pts[i + 1] - pts[i]
        dirs.append(seg / np.linalg.norm(seg))
    if len(path.interactions) >= 1:
        dirs.append(np.asarray(path.arrival_dir, dtype=np.float64))
    return dirs


def _rotate_components(c1: complex, c2: complex, b1, b2, new1, new2):
    return (c1 * float(np.dot(b1, new1)) + c2 * float(np.dot(b2, new1)),
            c1 * float(np.dot(b1, new2)) + c2 * float(np.dot(b2, new2)))


def _minimal_rotation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rotation matrix taking unit vector a onto unit vector b along the
    geodesic; used to parallel-transport a transverse basis."""
    c = float(np.dot(a, b))
    v = np.cross(a, b)
    s2 = float(np.dot(v, v))
    if s2 < 1e-24:
        if c > 0:
            return np.eye(3)
        # Antiparallel: rotate half a turn about any perpendicular axis.
        axis, _ = spherical_basis(a)
        return 2.0 * np.outer(axis, axis) - np.eye(3)
    vx = np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])
    return np.eye(3) + vx + vx @ vx * ((1.0 - c) / s2)


def path_field(path: PathRecord, frequency_hz: float, materials: list[Material],
               atmosphere: AtmosphereState | None = None,
               line_table: GasLineTable | None = None) -> PolarizedField:
    """Field received over one path for a unit theta-polarised launch.

    Applies the per-interaction dyadic coefficients with explicit basis
    rotation between interaction frames, free-space spreading over the
    unfolded length, and the atmospheric amplitude/excess-phase factors.
    """
    wavelength = SPEED_OF_LIGHT / frequency_hz
    k = 2.0 * math.pi / wavelength
    dirs = _segment_directions(path)
    d0 = dirs[0]
    b1, b2 = spherical_basis(d0)
    c1, c2 = 1.0 + 0.0j, 0.0j

    kinds = {i.kind for i in path.interactions}
    if kinds <= {"reflection"}:
        d = d0
        for idx, inter in enumerate(path.interactions):
            m = np.asarray(inter.surface_normal, dtype=np.float64)
            cross_dm = np.cross(d, m)
            s = np.linalg.norm(cross_dm)
            p = b1 if s < 1e-9 else cross_dm / s
            q_in = np.cross(d, p)
            c1, c2 = _rotate_components(c1, c2, b1, b2, p, q_in)
            mat = materials[inter.material_id]
            r_perp, r_par = _reflection_coefficients(mat, inter.incidence_angle,
                                                     frequency_hz, wavelength)
            c1 *= r_perp
            c2 *= r_par
            d = dirs[idx + 1]
            b1, b2 = p, np.cross(d, p)
        total = free_space_attenuation(path.unfolded_length, wavelength)
    elif kinds == {"diffraction"}:
        inter = path.interactions[0]
        s_in, s_out = path.segment_lengths
        edge = np.asarray(inter.edge_dir, dtype=np.float64)
        s_hat_in, s_hat_out = dirs[0], dirs[1]
        phi_in_hat = -np.cross(edge, s_hat_in)
        phi_in_hat /= np.linalg.norm(phi_in_hat)
        beta_in_hat = np.cross(phi_in_hat, s_hat_in)
        phi_out_hat = np.cross(edge, s_hat_out)
        phi_out_hat /= np.linalg.norm(phi_out_hat)
        beta_out_hat = np.cross(phi_out_hat, s_hat_out)
        c_beta, c_phi = _rotate_components(c1, c2, b1, b2, beta_in_hat, phi_in_hat)
        d_soft, spreading = utd_diffraction(
            inter.wedge_interior_angle, inter.phi_incident, inter.phi_observed,
            inter.beta0, s_in, s_out, wavelength, "soft")
        d_hard, _ = utd_diffraction(
            inter.wedge_interior_angle, inter.phi_incident, inter.phi_observed,
            inter.beta0, s_in, s_out, wavelength, "hard")
        c1 = -d_soft * c_beta
        c2 = -d_hard * c_phi
        b1, b2 = beta_out_hat, phi_out_hat
        total = (free_space_attenuation(s_in, wavelength)
                 * spreading * cmath.exp(-1j * k * s_out))
    elif kinds == {"scattering"}:
        inter = path.interactions[0]
        r_in, r_out = path.segment_lengths
        mat = materials[inter.material_id]
        factor = er_scattering(
            mat.scattering_coeff, mat.scattering_lobe_width, dirs[0], dirs[1],
            np.asarray(inter.surface_normal), inter.patch_area, r_in, r_out)
        rot = _minimal_rotation(dirs[0], dirs[1])
        b1, b2 = rot @ b1, rot @ b2
        c1 *= factor
        c2 *= factor
        total = (free_space_attenuation(r_in, wavelength)
                 * cmath.exp(-1j * k * r_out))
    else:
        raise ValueError(f"unsupported interaction mix {sorted(kinds)}")

    total *= _atmospheric_factor(path.unfolded_length, frequency_hz, atmosphere,
                                 line_table)
    arrival = dirs[-1]
    at_hat, ap_hat = spherical_basis(arrival)
    e_theta, e_phi = _rotate_components(c1, c2, b1, b2, at_hat, ap_hat)
    return PolarizedField(e_theta=e_theta * total, e_phi=e_phi * total,
                          direction=(float(arrival[0]), float(arrival[1]),
                                     float(arrival[2])))
