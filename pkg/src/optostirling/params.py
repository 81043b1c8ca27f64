"""Device and control parameter records.

All rates, frequencies and couplings are stored in units of the bare
mechanical frequency omega_m; times are in units of 1/omega_m and energies in
units of hbar*omega_m.  The SI value of omega_m is kept on the record so that
temperatures can be converted at the boundary.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

__all__ = [
    "Constants",
    "CODATA",
    "PhysicalParams",
    "FeedbackParams",
    "ValidationResult",
    "validate_params",
    "thermal_occupation",
    "parse_config",
    "load_config",
    "params_from_config",
    "load_preset",
    "PRESET_NAMES",
]


@dataclass(frozen=True)
class Constants:
    hbar: float = 1.054571817e-34  # J s
    k_B: float = 1.380649e-23  # J / K

    def __post_init__(self):
        if not (self.hbar > 0 and self.k_B > 0):
            raise ValueError("physical constants must be strictly positive")


CODATA = Constants()


def thermal_occupation(T_bath: float, omega: float, c: Constants = CODATA) -> float:
    """Bose-Einstein occupation of a mode at angular frequency ``omega`` (rad/s)."""
    if not (T_bath > 0 and omega > 0):
        raise ValueError("thermal_occupation needs T_bath > 0 and omega > 0")
    x = c.hbar * omega / (c.k_B * T_bath)
    if x > 700.0:
        return 0.0
    return 1.0 / math.expm1(x)


@dataclass(frozen=True)
class PhysicalParams:
    """Fixed device constants, rates in units of omega_m.

    ``kappa`` defaults to ``kappa1 + kappa2`` and ``n_T`` to the Bose-Einstein
    occupation at ``T_bath``; both may be given explicitly, in which case
    :func:`validate_params` reports any inconsistency.
    """

    kappa1: float = 1.0
    kappa2: float = 1.0
    Delta: float = 1.0
    G: float = 0.1
    gamma: float = 1e-4
    eta_d: float = 0.9
    T_bath: float = 300.0
    omega_m: float = 2 * math.pi * 1e5  # rad/s
    kappa: float | None = None
    n_T: float | None = None

    def __post_init__(self):
        if self.kappa is None:
            object.__setattr__(self, "kappa", self.kappa1 + self.kappa2)
        if self.n_T is None:
            n_T = thermal_occupation(self.T_bath, self.omega_m) if self.T_bath > 0 else 0.0
            object.__setattr__(self, "n_T", n_T)

    def evolve(self, **changes) -> "PhysicalParams":
        """Copy with ``changes`` applied; derived fields are recomputed unless given."""
        values = dataclasses.asdict(self)
        if "kappa" not in changes and ({"kappa1", "kappa2"} & changes.keys()):
            values["kappa"] = None
        if "n_T" not in changes and ({"T_bath", "omega_m"} & changes.keys()):
            values["n_T"] = None
        values.update(changes)
        return PhysicalParams(**values)

    def quantum_temperature(self, c: Constants = CODATA) -> float:
        """Temperature (K) of one quantum hbar*omega_m."""
        return c.hbar * self.omega_m / c.k_B


@dataclass(frozen=True)
class FeedbackParams:
    """The two steerable knobs: gain and total feedback phase.

    ``phi`` may instead be built from a homodyne phase and delay with
    :meth:`from_homodyne`; the three are then checked for consistency.
    """

    g_fb: float = 0.0
    phi: float = 0.0
    theta_fb: float | None = None
    tau_fb: float | None = None
    Delta: float | None = None

    def __post_init__(self):
        if not self.g_fb >= 0:
            raise ValueError(f"g_fb must be non-negative, got {self.g_fb}")
        if self.theta_fb is not None or self.tau_fb is not None:
            if self.theta_fb is None or self.tau_fb is None or self.Delta is None:
                raise ValueError("theta_fb, tau_fb and Delta must be supplied together")
            expected = self.theta_fb - self.Delta * self.tau_fb
            if abs(self.phi - expected) > 1e-12:
                raise ValueError(
                    f"phi={self.phi} inconsistent with theta_fb - Delta*tau_fb = {expected}"
                )

    @classmethod
    def from_homodyne(cls, g_fb: float, theta_fb: float, tau_fb: float, Delta: float):
        return cls(g_fb=g_fb, phi=theta_fb - Delta * tau_fb, theta_fb=theta_fb,
                   tau_fb=tau_fb, Delta=Delta)


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[str, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def validate_params(p: PhysicalParams) -> ValidationResult:
    checks = [
        ("kappa = kappa1+kappa2",
         abs(p.kappa - (p.kappa1 + p.kappa2)) <= 1e-12 * max(1.0, abs(p.kappa))),
        ("gamma > 0", p.gamma > 0),
        ("kappa1 >= 0", p.kappa1 >= 0),
        ("kappa2 > 0", p.kappa2 > 0),
        ("G >= 0", p.G >= 0),
        ("0 < eta_d ≤ 1", 0 < p.eta_d <= 1),
        ("T_bath > 0", p.T_bath > 0),
        ("n_T >= 0", p.n_T >= 0),
        ("omega_m > 0", p.omega_m > 0),
    ]
    return ValidationResult(tuple(name for name, good in checks if not good))


# -- key/value configuration -------------------------------------------------

_PARAM_KEYS = {f.name for f in dataclasses.fields(PhysicalParams)}
PRESET_NAMES = ("fig3", "appB-weak", "appB-strong")


def parse_config(text: str) -> dict[str, str]:
    """Parse ``name = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'name = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        out[key] = value
    return out


def load_config(path: str | Path) -> dict[str, str]:
    return parse_config(Path(path).read_text())


def params_from_config(cfg: dict[str, str]) -> PhysicalParams:
    """Build :class:`PhysicalParams` from the parameter keys of a config mapping.

    Keys that are not parameter fields (plane windows, for instance) are
    ignored here.
    """
    kwargs = {k: float(v) for k, v in cfg.items() if k in _PARAM_KEYS}
    return PhysicalParams(**kwargs)


def load_preset(name: str) -> tuple[PhysicalParams, dict[str, str]]:
    """Return the parameters and raw key/value mapping of a shipped preset."""
    if name not in PRESET_NAMES:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")
    text = resources.files("optostirling.presets").joinpath(f"{name}.cfg").read_text()
    cfg = parse_config(text)
    return params_from_config(cfg), cfg
