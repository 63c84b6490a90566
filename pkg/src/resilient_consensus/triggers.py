"""Event conditions for inter-layer sampling and their MIET lower bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .design import LayerDesign, TriggerParams


class TriggerMode(str, Enum):
    SINGLE = "single_state_based"
    DYNAMIC = "layerwise_dynamic"


@dataclass(frozen=True)
class TriggerState:
    eta: float = 0.0
    nu: float = 0.0
    last_event_physical: float = 0.0
    last_event_auxiliary: float = 0.0
    last_event_joint: float = 0.0


def _sq(v) -> float:
    v = np.asarray(v, dtype=float)
    return float(v @ v)


def single_condition(design: LayerDesign, params: TriggerParams, x_tilde, z, e_x, e_z):
    """Joint state-based condition; returns ``(lhs, rhs, fire)``."""
    b = design.beta
    lhs = b / params.c1 * design.pxk_norm2 * _sq(e_z) + b / params.c2 * design.pzg_norm2 * _sq(e_x)
    rhs = params.kappa * (
        (design.lambda_min_Qx - params.c3 - params.c1 * b) * _sq(x_tilde)
        + (design.lambda_min_Qz - params.c2 * b) * _sq(z)
        + params.epsilon
        - params.single_attack_term(design)
    )
    return lhs, rhs, lhs >= rhs


def physical_threshold(params: TriggerParams, design: LayerDesign, eta: float) -> float:
    return params.c2 * (eta + params.omega(design)) / (design.beta * design.pzg_norm2 + params.sigma1 * params.c2)


def auxiliary_threshold(params: TriggerParams, design: LayerDesign, nu: float) -> float:
    return params.c1 * (nu + params.mu) / (design.beta * design.pxk_norm2 + params.sigma2 * params.c1)


def physical_condition(params: TriggerParams, design: LayerDesign, e_x, eta: float):
    """Physical-layer dynamic condition; fires on ``||e_x||^2 >= threshold``."""
    lhs = _sq(e_x)
    thr = physical_threshold(params, design, eta)
    return lhs, thr, lhs >= thr


def auxiliary_condition(params: TriggerParams, design: LayerDesign, e_z, nu: float):
    lhs = _sq(e_z)
    thr = auxiliary_threshold(params, design, nu)
    return lhs, thr, lhs >= thr


def internal_step(state: TriggerState, e_x, e_z, params: TriggerParams, dt: float) -> TriggerState:
    """One forward-Euler step of the internal filter variables."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if dt > 1:
        raise ValueError("dt > 1 breaks positivity of the Euler update")
    eta = state.eta + dt * (-state.eta + params.sigma1 * _sq(e_x))
    nu = state.nu + dt * (-state.nu + params.sigma2 * _sq(e_z))
    return replace(state, eta=eta, nu=nu)


def miet_physical(params: TriggerParams, design: LayerDesign, M_x: float) -> float:
    if not M_x > 0:
        raise ValueError("M_x must be positive")
    return math.sqrt(physical_threshold(params, design, 0.0)) / (2.0 * M_x)


def miet_auxiliary(params: TriggerParams, design: LayerDesign, M_z: float) -> float:
    if not M_z > 0:
        raise ValueError("M_z must be positive")
    return math.sqrt(auxiliary_threshold(params, design, 0.0)) / (2.0 * M_z)


def miet_single(params: TriggerParams, design: LayerDesign, M_x: float, M_z: float) -> float:
    """Lower bound on gaps of the single joint condition.

    Each error budget is bounded separately by the residual constant of the
    right-hand side; the growth rate of the summed squared errors is then
    bounded by ``rho``.
    """
    if not (M_x > 0 and M_z > 0):
        raise ValueError("M_x and M_z must be positive")
    margin = params.epsilon - params.single_attack_term(design)
    if not margin > 0:
        raise ValueError("epsilon must exceed the attack term")
    b = design.beta
    ax = params.c2 * params.kappa * margin / (b * design.pzg_norm2)
    az = params.c1 * params.kappa * margin / (b * design.pxk_norm2)
    rho = 2.0 * (M_x * math.sqrt(ax) + M_z * math.sqrt(az))
    return (ax + az) / rho


def kernel_coefficients(params: TriggerParams, design: LayerDesign) -> dict:
    """Scalars the integration kernel needs, precomputed once per run."""
    b = design.beta
    return dict(
        # dynamic thresholds: num * (state + const) / den
        phys_num=params.c2,
        phys_const=params.omega(design),
        phys_den=b * design.pzg_norm2 + params.sigma1 * params.c2,
        aux_num=params.c1,
        aux_const=params.mu,
        aux_den=b * design.pxk_norm2 + params.sigma2 * params.c1,
        # single condition: lhs = wz*|e_z|^2 + wx*|e_x|^2;
        # rhs = kappa * (ax*|x~|^2 + az*|z|^2 + const)
        single_wz=b / params.c1 * design.pxk_norm2,
        single_wx=b / params.c2 * design.pzg_norm2,
        single_kappa=params.kappa if params.kappa is not None else float("nan"),
        single_ax=design.lambda_min_Qx - params.c3 - params.c1 * b,
        single_az=design.lambda_min_Qz - params.c2 * b,
        single_const=params.epsilon - params.single_attack_term(design),
        sigma1=params.sigma1,
        sigma2=params.sigma2,
    )


def ellipse_axes(params: TriggerParams, design: LayerDesign) -> tuple[float, float]:
    """Semi-axes ``(g1, g2)`` of the ultimate-bound ellipse in (||x~||, ||z||)."""
    b = design.beta
    s = params.epsilon + params.mu
    g1 = math.sqrt(s / (design.lambda_min_Qx - params.c3 - params.c1 * b))
    g2 = math.sqrt(s / (design.lambda_min_Qz - params.c2 * b))
    return g1, g2
