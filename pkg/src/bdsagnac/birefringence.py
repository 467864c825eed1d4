"""Walk-off angle and effective extraordinary index of a uniaxial element.

Angles are degrees at the API boundary.  ``theta`` is the angle between the
optic axis and the incident wavevector; the extraordinary wave sees the
optic axis at ``theta_e = theta + psi``.
"""

import math

from .errors import DomainError


def _check_indices(n_o, n_e):
    if not (n_o > 0 and n_e > 0) or not (math.isfinite(n_o) and math.isfinite(n_e)):
        raise DomainError(f"non-physical refractive indices n_o={n_o}, n_e={n_e}")


def _check_angle(angle_deg, name="theta"):
    if not (0.0 <= angle_deg <= 90.0):
        raise DomainError(f"{name}={angle_deg} deg outside [0, 90]")


def walkoff_angle(n_o: float, n_e: float, theta_deg: float) -> float:
    """Walk-off angle psi in degrees.

    tan(psi) = (n_e^2 - n_o^2) cos(theta) sin(theta) / (n_e^2 cos^2(theta) + n_o^2 sin^2(theta)).
    Negative for negative uniaxial crystals (n_e < n_o).
    """
    _check_indices(n_o, n_e)
    _check_angle(theta_deg)
    t = math.radians(theta_deg)
    c, s = math.cos(t), math.sin(t)
    num = (n_e**2 - n_o**2) * c * s
    den = n_e**2 * c**2 + n_o**2 * s**2
    return math.degrees(math.atan(num / den))


def extraordinary_angle(n_o: float, n_e: float, theta_deg: float) -> float:
    """theta_e = psi + theta, in degrees."""
    return theta_deg + walkoff_angle(n_o, n_e, theta_deg)


def effective_index(n_o: float, n_e: float, theta_e_deg: float) -> float:
    """1/n_eff^2 = sin^2(theta_e)/n_e^2 + cos^2(theta_e)/n_o^2."""
    _check_indices(n_o, n_e)
    _check_angle(theta_e_deg, "theta_e")
    t = math.radians(theta_e_deg)
    return n_o * n_e / math.sqrt(n_o**2 * math.sin(t) ** 2 + n_e**2 * math.cos(t) ** 2)


def effective_thermo_optic(n_o, n_e, dno_dT, dne_dT, theta_e_deg):
    """Temperature derivative of :func:`effective_index` at fixed theta_e.

    With D = n_o^2 sin^2 + n_e^2 cos^2 and n_eff = n_o n_e / sqrt(D):

        dn_eff/dT = (n_o' n_e + n_o n_e') / sqrt(D)
                    - n_o n_e (n_o n_o' sin^2 + n_e n_e' cos^2) / D^(3/2)
    """
    _check_indices(n_o, n_e)
    _check_angle(theta_e_deg, "theta_e")
    t = math.radians(theta_e_deg)
    s2, c2 = math.sin(t) ** 2, math.cos(t) ** 2
    d = n_o**2 * s2 + n_e**2 * c2
    first = (dno_dT * n_e + n_o * dne_dT) / math.sqrt(d)
    second = n_o * n_e * (n_o * dno_dT * s2 + n_e * dne_dT * c2) / d**1.5
    return first - second
