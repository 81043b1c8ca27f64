"""Linear stability and adiabaticity classification of control points."""
from __future__ import annotations

import enum

import numpy as np

from .cavity import EffectiveCavity, feedback_mu
from .mech import mech_fields
from .params import FeedbackParams, PhysicalParams

__all__ = [
    "RegimeClass",
    "drift_matrix",
    "eigenvalues",
    "is_stable",
    "regime_classify",
    "classify_fields",
]


class RegimeClass(enum.IntEnum):
    """Regime label of a control point.

    Only ``VALID`` points admit the adiabatically eliminated description.
    ``NONADIABATIC`` points are dynamically stable but the cavity is too slow
    (or the mechanical formulas are unphysical there).
    """

    VALID = 0
    NONADIABATIC = 1
    UNSTABLE = 2
    DEGENERATE = 3

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> "RegimeClass":
        return _FROM_LABEL[label]


_LABELS = {
    RegimeClass.VALID: "Valid",
    RegimeClass.NONADIABATIC: "NonAdiabatic",
    RegimeClass.UNSTABLE: "Unstable",
    RegimeClass.DEGENERATE: "Degenerate",
}
_FROM_LABEL = {v: k for k, v in _LABELS.items()}


def drift_matrix(p: PhysicalParams, eff: EffectiveCavity, G=None) -> np.ndarray:
    """Drift matrix of the linearised cavity-resonator system.

    The basis is ``(a, a^dag, b, b^dag)``.  Array-valued ``eff`` (or ``G``)
    yields a stack of matrices with shape ``(..., 4, 4)``.
    """
    G = p.G if G is None else G
    mu = np.asarray(eff.mu, dtype=complex)
    ke = np.asarray(eff.kappa_eff, dtype=float)
    De = np.asarray(eff.Delta_eff, dtype=float)
    G = np.asarray(G, dtype=float)
    shape = np.broadcast_shapes(mu.shape, ke.shape, De.shape, G.shape)
    A = np.zeros(shape + (4, 4), dtype=complex)
    iG = 1j * np.broadcast_to(G, shape)
    A[..., 0, 0] = -(ke + 1j * De)
    A[..., 0, 1] = np.conj(mu)
    A[..., 0, 2] = -iG
    A[..., 0, 3] = -iG
    A[..., 1, 0] = mu
    A[..., 1, 1] = -(ke - 1j * De)
    A[..., 1, 2] = iG
    A[..., 1, 3] = iG
    A[..., 2, 0] = -iG
    A[..., 2, 1] = -iG
    A[..., 2, 2] = -(p.gamma / 2 + 1j)
    A[..., 3, 0] = iG
    A[..., 3, 1] = iG
    A[..., 3, 3] = -(p.gamma / 2 - 1j)
    return A


def eigenvalues(m: np.ndarray) -> np.ndarray:
    """Eigenvalues of one drift matrix or a stack of them."""
    return np.linalg.eigvals(m)


def is_stable(m: np.ndarray, margin: float = 0.0):
    """True where every eigenvalue has real part below ``-margin``."""
    return eigenvalues(m).real.max(axis=-1) < -margin


def classify_fields(p: PhysicalParams, fields: dict, margin: float = 0.0) -> np.ndarray:
    """Regime codes (``int8``) for the output of :func:`~optostirling.mech.mech_fields`.

    Rules, applied in order: ``kappa_eff <= 0`` is degenerate; an unstable
    drift matrix or a response pole is unstable; otherwise the point is
    non-adiabatic when ``kappa_eff <= max(G, Gamma_m)`` or when the mechanical
    formulas break down (``gamma + Gamma_m <= 0``, ``1 + Delta_m <= 0`` or
    ``n_m < 0``); everything else is valid.
    """
    ke = fields["kappa_eff"]
    codes = np.full(ke.shape, RegimeClass.VALID, dtype=np.int8)
    degenerate = ~(ke > 0)
    stable = np.zeros(ke.shape, dtype=bool)
    ok = ~degenerate
    if np.any(ok):
        A = drift_matrix(p, EffectiveCavity(fields["mu"][ok], ke[ok], fields["Delta_eff"][ok],
                                            None, None), fields["G"][ok])
        stable[ok] = is_stable(A, margin)
    unstable = ~degenerate & (~stable | fields["pole"])
    Gm, Dm, n_m = fields["Gamma_m"], fields["Delta_m"], fields["n_m"]
    with np.errstate(invalid="ignore"):
        broken = ~(p.gamma + Gm > 0) | ~(1 + Dm > 0) | ~(n_m >= 0) | ~np.isfinite(fields["T"])
        slow = ke <= np.maximum(fields["G"], np.where(np.isnan(Gm), np.inf, Gm))
    codes[slow | broken] = RegimeClass.NONADIABATIC
    codes[unstable] = RegimeClass.UNSTABLE
    codes[degenerate] = RegimeClass.DEGENERATE
    return codes


def regime_classify(p: PhysicalParams, fb: FeedbackParams, margin: float = 0.0) -> RegimeClass:
    """Regime of a single feedback setting at the device parameters ``p``."""
    fields = mech_fields(p, feedback_mu(p, fb))
    fields = {k: np.atleast_1d(v) for k, v in fields.items()}
    return RegimeClass(int(classify_fields(p, fields, margin)[0]))
