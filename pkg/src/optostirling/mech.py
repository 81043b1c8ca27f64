"""Mechanical parameters after adiabatic elimination of the cavity.

The cavity imposes on the resonator an extra damping ``Gamma_m``, a frequency
shift ``Delta_m`` (the optical spring) and a bath occupation ``n_m``.  The
resonator excitation number then relaxes as

    dn_b/dt = -(gamma + Gamma_m) (n_b - n_m).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cavity import EffectiveCavity, big_lambda, dress, spectrum_x0
from .errors import HeatingRunaway, NegativeFrequency
from .params import CODATA, Constants, PhysicalParams

__all__ = [
    "MechanicalEffective",
    "gamma_m",
    "delta_m",
    "bath_occupation",
    "effective_temperature",
    "mechanical_effective",
    "nb_rate",
    "nb_analytic",
    "mech_fields",
]


@dataclass(frozen=True)
class MechanicalEffective:
    """Light-dressed mechanical mode.

    ``Gamma_m`` and ``Delta_m`` are in units of omega_m, ``n_m`` is an
    occupation number and ``T`` is in kelvin.
    """

    Gamma_m: float
    Delta_m: float
    n_m: float
    T: float


def _lambda_difference(eff, omega, check):
    return big_lambda(omega, eff, check) - np.conj(big_lambda(-omega, eff, check))


def gamma_m(eff: EffectiveCavity, G, omega_m: float = 1.0, check: bool = True):
    """Light-induced damping ``2 G^2 Re[L(w_m) - L(-w_m)*]``."""
    return 2 * np.asarray(G) ** 2 * np.real(_lambda_difference(eff, omega_m, check))


def delta_m(eff: EffectiveCavity, G, omega_m: float = 1.0, check: bool = True):
    """Optical spring ``G^2 Im[L(w_m) - L(-w_m)*]``."""
    return np.asarray(G) ** 2 * np.imag(_lambda_difference(eff, omega_m, check))


def bath_occupation(eff: EffectiveCavity, G, omega_m: float, gamma: float, n_T: float):
    """Steady-state occupation ``[G^2 S(-w_m) + gamma n_T] / (gamma + Gamma_m)``.

    Raises
    ------
    HeatingRunaway
        If ``gamma + Gamma_m <= 0``.
    """
    total = gamma + gamma_m(eff, G, omega_m)
    if np.any(total <= 0):
        raise HeatingRunaway(f"gamma + Gamma_m = {np.min(total):.6g} <= 0")
    return (np.asarray(G) ** 2 * spectrum_x0(-omega_m, eff) + gamma * n_T) / total


def effective_temperature(Delta_m, n_m, omega_m: float, c: Constants = CODATA):
    """Reservoir temperature ``hbar (omega_m + Delta_m) n_m / k_B`` in kelvin.

    ``Delta_m`` is in units of omega_m while ``omega_m`` is the SI angular
    frequency.

    Raises
    ------
    NegativeFrequency
        If ``1 + Delta_m <= 0``.
    """
    shifted = 1.0 + np.asarray(Delta_m, dtype=float)
    if np.any(shifted <= 0):
        raise NegativeFrequency(f"omega_m + Delta_m = {np.min(shifted):.6g} omega_m <= 0")
    out = c.hbar * omega_m * shifted * np.asarray(n_m, dtype=float) / c.k_B
    return out[()] if out.ndim == 0 else out


def mechanical_effective(p: PhysicalParams, eff: EffectiveCavity, G=None) -> MechanicalEffective:
    """All mechanical quantities at one control point, raising on any failure."""
    G = p.G if G is None else G
    Gm = gamma_m(eff, G)
    Dm = delta_m(eff, G)
    n_m = bath_occupation(eff, G, 1.0, p.gamma, p.n_T)
    T = effective_temperature(Dm, n_m, p.omega_m)
    return MechanicalEffective(float(Gm), float(Dm), float(n_m), float(T))


def mech_fields(p: PhysicalParams, mu, Delta=None, G=None) -> dict[str, np.ndarray]:
    """Vectorised evaluation of every field over arrays of controls.

    Never raises.  Points where a formula is undefined get NaN and the flags
    ``pole`` (response denominator below threshold at +-omega_m) report why.

    Returns
    -------
    dict
        Arrays ``mu, kappa_eff, Delta_eff, Gamma_m, Delta_m, n_m, T, pole``
        broadcast to a common shape.
    """
    G = np.asarray(p.G if G is None else G, dtype=float)
    eff = dress(p, mu, Delta)
    shape = np.broadcast_shapes(np.shape(eff.mu), np.shape(eff.Delta_eff), G.shape)
    mu = np.broadcast_to(eff.mu, shape)
    kappa_eff = np.broadcast_to(eff.kappa_eff, shape)
    Delta_eff = np.broadcast_to(eff.Delta_eff, shape)
    G = np.broadcast_to(G, shape)
    eff = EffectiveCavity(mu, kappa_eff, Delta_eff, np.broadcast_to(eff.n_eff, shape),
                          np.broadcast_to(eff.m_eff, shape))

    with np.errstate(all="ignore"):
        pole = np.zeros(shape, dtype=bool)
        for w in (1.0, -1.0):
            cp = 1.0 / (kappa_eff + 1j * (Delta_eff - w))
            cm = np.conj(1.0 / (kappa_eff + 1j * (Delta_eff + w)))
            pole |= np.abs(1.0 - np.abs(mu) ** 2 * cp * cm) < 1e-12
        diff = _lambda_difference(eff, 1.0, False)
        Gm = np.array(2 * G**2 * diff.real, dtype=float)
        Dm = np.array(G**2 * diff.imag, dtype=float)
        S_minus = spectrum_x0(-1.0, eff, False)
        n_m = np.array((G**2 * S_minus + p.gamma * p.n_T) / (p.gamma + Gm), dtype=float)
        T = np.array(CODATA.hbar * p.omega_m * (1.0 + Dm) * n_m / CODATA.k_B, dtype=float)
    bad = pole | ~(kappa_eff > 0)
    for a in (Gm, Dm, n_m, T):
        a[bad] = np.nan
    return dict(mu=np.array(mu), kappa_eff=np.array(kappa_eff), Delta_eff=np.array(Delta_eff),
                G=np.array(G), Gamma_m=Gm, Delta_m=Dm, n_m=n_m, T=T, pole=pole)


def nb_rate(n_b, gamma, Gamma_m, n_m):
    """Right-hand side of the excitation-number equation."""
    return -(gamma + Gamma_m) * (n_b - n_m)


def nb_analytic(t, n_b0, gamma, Gamma_m, n_m):
    """Closed-form solution of :func:`nb_rate` for constant coefficients."""
    return n_m + (n_b0 - n_m) * np.exp(-(gamma + Gamma_m) * np.asarray(t))
