"""Grey material physics: Planck emission and the per-step Newton linearization.

Units follow the jerk-shake-keV convention: lengths in cm, time in shakes
(1e-8 s), temperatures in keV, energies in GJ (jerks).  The radiation constant
defaults to 0.01372 GJ/(cm^3 keV^4) and the speed of light to 299.79 cm/sh.

One implicit step with emission linearized about the start-of-step
temperature T0 turns the coupled radiation/material update into a single
steady transport solve with

    pseudo scattering   sigma_s = sigma * 4*pi*dt*sigma*dB/dT / denom
    emission source     q       = sigma * B(T0) * rho*c_v / denom
    pseudo total        sigma_t = sigma + 1/(c*dt)
    denom               = rho*c_v + 4*pi*dt*sigma*dB/dT

followed by the closed-form temperature update

    T = T0 + dt*sigma*(phi - 4*pi*B(T0)) / denom.

The source q is written so that radiative equilibrium (phi = 4*pi*B(T0)) is an
exact fixed point of the linearized system; emission and material heating then
cancel identically and the per-step energy balance closes to solver tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

FOUR_PI = 4.0 * np.pi
DEFAULT_T_FLOOR = 1e-6  # keV


@dataclass(frozen=True)
class PhysicsConstants:
    c: float = 299.79  # speed of light, cm/sh
    a_r: float = 0.01372  # radiation constant, GJ/(cm^3 keV^4)


@dataclass(frozen=True)
class Material:
    """Grey material: absorption opacity (1/cm), specific heat (GJ/(g keV)),
    density (g/cm^3)."""

    sigma_a: float
    c_v: float
    rho: float

    def __post_init__(self):
        if self.sigma_a < 0 or self.c_v <= 0 or self.rho <= 0:
            raise ContractViolation(
                f"material needs sigma_a >= 0, c_v > 0, rho > 0; got {self}"
            )

    @property
    def rho_cv(self):
        return self.rho * self.c_v


def planck(T, constants=PhysicsConstants()):
    """Grey Planck function and its temperature derivative.

    B(T) = a_r c T^4 / (4 pi), dB/dT = a_r c T^3 / pi.  T may be a scalar or
    array; negative temperatures are rejected.
    """
    T = np.asarray(T, dtype=float)
    if np.any(T < 0):
        raise ContractViolation("negative temperature passed to planck()")
    scale = constants.a_r * constants.c
    B = scale / FOUR_PI * T**4
    dBdT = scale / np.pi * T**3
    return B, dBdT


@dataclass(eq=False)
class LinearizedStep:
    """Per-cell coefficient fields for one linearized implicit step."""

    sigma_t: np.ndarray  # pseudo total: sigma_a + 1/(c dt)
    sigma_s: np.ndarray  # pseudo scattering from the Newton emission term
    sigma_a: np.ndarray  # true absorption opacity
    q: np.ndarray  # effective emission source (per steradian)
    T0: np.ndarray
    denom: np.ndarray  # rho c_v + 4 pi dt sigma dB/dT
    rho_cv: np.ndarray
    dt: float
    inv_cdt: float  # 1/(c dt); 0 means steady problem
    constants: PhysicsConstants = PhysicsConstants()


def linearize(T0, sigma_a, rho_cv, dt, constants=PhysicsConstants()):
    """Freeze the emission Newton linearization about T0 (all per-cell arrays)."""
    T0 = np.asarray(T0, dtype=float)
    sigma_a = np.asarray(sigma_a, dtype=float)
    rho_cv = np.asarray(rho_cv, dtype=float)
    if dt <= 0:
        raise ContractViolation(f"time step must be positive, got {dt}")
    if np.any(sigma_a < 0) or np.any(rho_cv <= 0):
        raise ContractViolation("need sigma_a >= 0 and rho*c_v > 0 in every cell")

    B, dBdT = planck(T0, constants)
    denom = rho_cv + FOUR_PI * dt * sigma_a * dBdT
    sigma_s = sigma_a * (FOUR_PI * dt * sigma_a * dBdT) / denom
    q = sigma_a * B * rho_cv / denom
    inv_cdt = 1.0 / (constants.c * dt)
    return LinearizedStep(
        sigma_t=sigma_a + inv_cdt,
        sigma_s=sigma_s,
        sigma_a=sigma_a,
        q=q,
        T0=T0,
        denom=denom,
        rho_cv=rho_cv,
        dt=dt,
        inv_cdt=inv_cdt,
        constants=constants,
    )


def update_temperature(phi, step, t_floor=DEFAULT_T_FLOOR):
    """Closed-form Newton temperature update from the new scalar flux.

    Satisfies rho*c_v*(T - T0) = dt*sigma*(phi - 4*pi*B(T0)) -
    4*pi*dt*sigma*dB/dT*(T - T0) exactly, then clamps at the floor.
    """
    phi = np.asarray(phi, dtype=float)
    B0, _ = planck(step.T0, step.constants)
    T = step.T0 + step.dt * step.sigma_a * (phi - FOUR_PI * B0) / step.denom
    return np.maximum(T, t_floor)
