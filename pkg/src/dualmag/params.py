"""Physical inputs and squeezed-frame derived quantities.

All rates (omega_m, lambda1, lambda2, kappa, gamma) are angular frequencies in
rad/s.  Table-style inputs quoted as "8.4 kHz" are taken as 8.4e3 rad/s, i.e.
no factor of 2*pi is inserted; only omega_m carries an explicit 2*pi.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

HBAR = 1.054571817e-34  # J s, CODATA 2018
KB = 1.380649e-23  # J/K, exact SI

OMEGA_M_REF = 2 * math.pi * 134e3


class ParameterError(ValueError):
    """Raised when physical inputs violate their invariants."""


@dataclass(frozen=True)
class SystemParams:
    omega_m: float = OMEGA_M_REF
    lambda1: float = 8.4e3
    lambda2: float = 1e-7 * OMEGA_M_REF
    kappa: float = 8.4e3
    gamma: float = 840.0
    n_th: float = 10.0
    mass: float = 4e-11
    rod_length: float = 630e-6
    alpha_mag: float = 5e8  # N T^-1 m^-1
    young_modulus: float = 30e9
    B_z: float = 0.0
    N1: float = 1e6
    N2: float = 0.0
    alpha: complex = 1.0 + 0j
    beta: complex = 0j

    def __post_init__(self):
        object.__setattr__(self, "alpha", complex(self.alpha))
        object.__setattr__(self, "beta", complex(self.beta))
        for name in ("omega_m", "mass", "young_modulus", "rod_length"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("n_th", "kappa", "gamma", "N1", "N2", "lambda2"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be non-negative, got {getattr(self, name)}")
        if squeeze_ratio(self) >= 1.0:
            raise ParameterError(
                "4*lambda2*N2/omega_m must be < 1 (squeezing parameter diverges); "
                f"got {squeeze_ratio(self):.6g}"
            )

    def replace(self, **changes) -> "SystemParams":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class DerivedParams:
    r: float
    omega_s: float
    lambda_s: float
    c_act: float
    f: float
    f_s: float
    lambda_tilde: float
    f_tilde: float
    tau1: float
    half_period: float
    spring_k: float
    # B_z -> f conversion, rad s^-1 T^-1
    drive_per_tesla: float = field(repr=False, default=0.0)

    def as_dict(self) -> dict[str, float]:
        return dataclasses.asdict(self)


def squeeze_ratio(p: SystemParams) -> float:
    return 4.0 * p.lambda2 * p.N2 / p.omega_m


def actuation_constant(p: SystemParams) -> float:
    """Magnetic actuation constant m*omega_m^2*L*alpha_mag/E in N/T."""
    return p.mass * p.omega_m**2 * p.rod_length * p.alpha_mag / p.young_modulus


def drive_per_tesla(p: SystemParams) -> float:
    return actuation_constant(p) / math.sqrt(2.0 * p.mass * HBAR * p.omega_m)


def derive(p: SystemParams) -> DerivedParams:
    r = -0.25 * math.log1p(-squeeze_ratio(p))
    omega_s = p.omega_m * math.exp(-2 * r)
    lambda_s = p.lambda1 * math.exp(r)
    c_act = actuation_constant(p)
    g = drive_per_tesla(p)
    f = p.B_z * g
    f_s = f * math.exp(r)
    half = math.pi / omega_s
    return DerivedParams(
        r=r,
        omega_s=omega_s,
        lambda_s=lambda_s,
        c_act=c_act,
        f=f,
        f_s=f_s,
        lambda_tilde=lambda_s / omega_s,
        f_tilde=f_s / omega_s,
        tau1=2 * half,
        half_period=half,
        spring_k=p.mass * p.omega_m**2,
        drive_per_tesla=g,
    )


def r_for_target(p: SystemParams, r_target: float) -> float:
    """Ancilla photon number N2 that produces squeezing parameter ``r_target``."""
    if r_target < 0:
        raise ParameterError("r_target must be >= 0")
    if r_target == 0:
        return 0.0
    if p.lambda2 == 0:
        raise ParameterError("lambda2 = 0 cannot produce r > 0")
    return p.omega_m / (4.0 * p.lambda2) * -math.expm1(-4.0 * r_target)


def with_r(p: SystemParams, r: float) -> SystemParams:
    return p.replace(N2=r_for_target(p, r))


def field_for_drive_ratio(p: SystemParams, ratio: float) -> float:
    """B_z (T) for which the bare drive f equals ``ratio * omega_m``."""
    return ratio * p.omega_m / drive_per_tesla(p)


def relative_fluctuation(p: SystemParams) -> float:
    """Relative photon-number fluctuation 1/sqrt(N2) of the ancilla mode."""
    return math.inf if p.N2 == 0 else 1.0 / math.sqrt(p.N2)


def reference_params(**overrides) -> SystemParams:
    """Reference parameter set with the bare drive set to f = 0.01 omega_m."""
    base = SystemParams()
    base = base.replace(B_z=field_for_drive_ratio(base, 0.01))
    return base.replace(**overrides) if overrides else base


_FIELDS = {f.name: f for f in dataclasses.fields(SystemParams)}


def parse_value(name: str, raw: Any):
    if name not in _FIELDS:
        raise ParameterError(f"unknown parameter {name!r}")
    if name in ("alpha", "beta"):
        if isinstance(raw, str):
            return complex(raw.replace(" ", ""))
        return complex(raw)
    return float(raw)


def from_mapping(values: Mapping[str, Any], base: SystemParams | None = None) -> SystemParams:
    """Build SystemParams from flat key/value pairs (strings allowed)."""
    base = reference_params() if base is None else base
    changes = {k: parse_value(k, v) for k, v in values.items()}
    return base.replace(**changes)


def to_mapping(p: SystemParams) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for name in _FIELDS:
        v = getattr(p, name)
        out[name] = [v.real, v.imag] if isinstance(v, complex) else v
    return out
