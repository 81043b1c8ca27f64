"""Feedback-dressed cavity: effective parameters, response functions, spectrum.

Every function accepts numpy arrays as well as scalars, so whole grids of
control points can be evaluated in one call.  Frequencies are in units of
omega_m.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCavity, ResponsePole
from .params import FeedbackParams, PhysicalParams

__all__ = [
    "POLE_THRESHOLD",
    "EffectiveCavity",
    "feedback_mu",
    "dress",
    "effective_cavity",
    "chi",
    "big_lambda",
    "small_lambda",
    "spectrum_x0",
]

POLE_THRESHOLD = 1e-12


@dataclass(frozen=True)
class EffectiveCavity:
    """Cavity parameters after the feedback loop is closed.

    Attributes
    ----------
    mu : complex or ndarray
        Complex feedback parameter.
    kappa_eff, Delta_eff : float or ndarray
        Effective linewidth and detuning.
    n_eff : float or ndarray
        Effective input-noise occupation.
    m_eff : complex or ndarray
        Effective input-noise anomalous correlation.
    """

    mu: complex | np.ndarray
    kappa_eff: float | np.ndarray
    Delta_eff: float | np.ndarray
    n_eff: float | np.ndarray
    m_eff: complex | np.ndarray


def feedback_mu(p: PhysicalParams, fb: FeedbackParams | None = None, *,
                g_fb=None, phi=None):
    """Complex feedback parameter ``2 sqrt(eta_d k1 k2) g_fb exp(-i phi)``.

    Either pass a :class:`FeedbackParams` or arrays ``g_fb`` and ``phi``.
    """
    if fb is not None:
        g_fb, phi = fb.g_fb, fb.phi
    g_fb = np.asarray(g_fb, dtype=float)
    phi = np.asarray(phi, dtype=float)
    mu = 2.0 * np.sqrt(p.eta_d * p.kappa1 * p.kappa2) * g_fb * np.exp(-1j * phi)
    return mu[()] if mu.ndim == 0 else mu


def dress(p: PhysicalParams, mu, Delta=None) -> EffectiveCavity:
    """Effective cavity for a given ``mu`` without checking ``kappa_eff > 0``.

    ``Delta`` overrides the detuning of ``p`` (used when the detuning is a
    swept control).  Noise occupations are NaN where ``kappa_eff <= 0``.
    """
    mu = np.asarray(mu, dtype=complex)
    Delta = p.Delta if Delta is None else np.asarray(Delta, dtype=float)
    kappa_eff = p.kappa - mu.real
    Delta_eff = Delta - mu.imag
    abs2 = mu.real**2 + mu.imag**2
    with np.errstate(divide="ignore", invalid="ignore"):
        n_eff = np.where(kappa_eff > 0, abs2 / (4 * p.eta_d * kappa_eff * p.kappa2), np.nan)
        n_eff = np.where(abs2 == 0, 0.0, n_eff)
        # n_eff * 2 eta_d kappa2 / mu rewritten without dividing by mu
        m_eff = np.where(mu == 0, 0j, n_eff - np.conj(mu) / (2 * kappa_eff))

    def unwrap(a):
        a = np.asarray(a)
        return a[()] if a.ndim == 0 else a

    return EffectiveCavity(unwrap(mu), unwrap(kappa_eff), unwrap(Delta_eff),
                           unwrap(n_eff), unwrap(m_eff))


def effective_cavity(p: PhysicalParams, fb: FeedbackParams) -> EffectiveCavity:
    """Dressed cavity at one feedback setting.

    Raises
    ------
    DegenerateCavity
        If the feedback closes the linewidth, ``kappa_eff <= 0``.
    """
    eff = dress(p, feedback_mu(p, fb))
    if not eff.kappa_eff > 0:
        raise DegenerateCavity(f"kappa_eff = {eff.kappa_eff:.6g} <= 0")
    return eff


def chi(omega, eff: EffectiveCavity):
    """Bare dressed susceptibility ``1/(kappa_eff + i(Delta_eff - omega))``."""
    return 1.0 / (eff.kappa_eff + 1j * (eff.Delta_eff - omega))


def _response(omega, eff, sign, check):
    c_p = chi(omega, eff)
    c_m = np.conj(chi(-omega, eff))
    mu = eff.mu
    den = 1.0 - np.abs(mu) ** 2 * c_p * c_m
    if check and np.any(np.abs(den) < POLE_THRESHOLD):
        raise ResponsePole(f"|1 - |mu|^2 chi(w) chi(-w)*| < {POLE_THRESHOLD:g}")
    num_mu = mu if sign > 0 else -np.conj(mu)
    with np.errstate(divide="ignore", invalid="ignore"):
        return c_p * (1.0 + num_mu * c_m) / den


def big_lambda(omega, eff: EffectiveCavity, check: bool = True):
    """Quadrature response ``chi(w)[1 + mu chi(-w)*] / [1 - |mu|^2 chi(w) chi(-w)*]``.

    Raises
    ------
    ResponsePole
        If the denominator is smaller than :data:`POLE_THRESHOLD` and
        ``check`` is true.
    """
    return _response(omega, eff, +1, check)


def small_lambda(omega, eff: EffectiveCavity, check: bool = True):
    """Field response ``chi(w)[1 - mu* chi(-w)*] / [1 - |mu|^2 chi(w) chi(-w)*]``."""
    return _response(omega, eff, -1, check)


def spectrum_x0(omega, eff: EffectiveCavity, check: bool = True):
    """Power spectrum of the input-driven cavity quadrature.

    ``2 kappa_eff [(n_eff+1)|L(w)|^2 + n_eff |L(-w)|^2 + 2 Re(m_eff L(w) L(-w))]``
    with ``L`` the quadrature response :func:`big_lambda`.
    """
    lp = big_lambda(omega, eff, check)
    lm = big_lambda(-np.asarray(omega), eff, check)
    s = (eff.n_eff + 1) * np.abs(lp) ** 2 + eff.n_eff * np.abs(lm) ** 2
    s = s + 2 * np.real(eff.m_eff * lp * lm)
    return 2 * eff.kappa_eff * s
