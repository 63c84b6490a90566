"""Two-layer sampled-data integrator driven by the active event trigger.

:func:`step` is a plain numpy reference of one integration step; :func:`run`
executes the same procedure through the compiled kernel for full horizons.
Per step: compute the sampling errors, evaluate the trigger(s), reset the
holds that fired, evaluate the derivatives with the updated holds, then
advance ``x``, ``z``, ``eta`` and ``nu``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import _kernel as K
from .attack import AttackModel, evaluate
from .design import LayerDesign, TriggerParams
from .triggers import (
    TriggerMode,
    TriggerState,
    auxiliary_condition,
    ellipse_axes,
    internal_step,
    kernel_coefficients,
    miet_auxiliary,
    miet_physical,
    miet_single,
    physical_condition,
    single_condition,
)

LAYER_NAMES = {K.LAYER_PHYSICAL: "physical", K.LAYER_AUXILIARY: "auxiliary", K.LAYER_JOINT: "joint"}
CHUNK_STEPS = 200_000


class SimulationError(RuntimeError):
    """Run aborted; ``partial`` holds the logs up to the failure."""

    def __init__(self, msg, partial=None):
        super().__init__(msg)
        self.partial = partial


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-5
    horizon: float = 20.0
    x0: float = 0.0
    x_init: Union[list, dict, None] = None
    z_init: Union[list, dict, None] = None
    rng_seed: Optional[int] = None
    decimation: int = 100
    integrator: str = "euler"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.dt > 1:
            raise ValueError("dt must not exceed 1 (internal-variable positivity)")
        if not self.horizon >= self.dt:
            raise ValueError("horizon must be at least one step")
        if int(self.decimation) < 1:
            raise ValueError("decimation stride must be >= 1")
        if self.integrator not in ("euler", "rk4"):
            raise ValueError(f"unknown integrator {self.integrator!r}")

    @property
    def nsteps(self) -> int:
        return int(round(self.horizon / self.dt))

    def initial_vectors(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        rng = None
        out = []
        for spec in (self.x_init, self.z_init):
            if spec is None:
                out.append(np.zeros(n))
            elif isinstance(spec, dict):
                if "uniform" not in spec:
                    raise ValueError(f"unsupported initial-condition spec {spec!r}")
                if self.rng_seed is None:
                    raise ValueError("random initial conditions need rng_seed")
                if rng is None:
                    rng = np.random.default_rng(self.rng_seed)
                lo, hi = spec["uniform"]
                out.append(rng.uniform(lo, hi, n))
            else:
                v = np.asarray(spec, dtype=float)
                if v.shape != (n,):
                    raise ValueError(f"initial vector has shape {v.shape}, expected {(n,)}")
                out.append(v.copy())
        return out[0], out[1]

    def to_dict(self) -> dict:
        return {
            "dt": self.dt, "horizon": self.horizon, "x0": self.x0, "x_init": self.x_init,
            "z_init": self.z_init, "rng_seed": self.rng_seed, "decimation": self.decimation,
            "integrator": self.integrator,
        }


@dataclass(frozen=True)
class SimState:
    t: float
    x: np.ndarray
    z: np.ndarray
    x_bar: np.ndarray
    z_bar: np.ndarray
    trigger: TriggerState = field(default_factory=TriggerState)

    @property
    def e_x(self) -> np.ndarray:
        return self.x - self.x_bar

    @property
    def e_z(self) -> np.ndarray:
        return self.z - self.z_bar

    def x_tilde(self, x0: float) -> np.ndarray:
        return self.x - x0

    @classmethod
    def initial(cls, x, z, eta0: float = 0.0, nu0: float = 0.0) -> "SimState":
        x = np.array(x, dtype=float)
        z = np.array(z, dtype=float)
        return cls(0.0, x, z, x.copy(), z.copy(), TriggerState(eta0, nu0))


@dataclass(frozen=True)
class EventRecord:
    time: float
    layer: str
    gap_since_last: float
    lhs: float
    threshold: float


def derivative(state: SimState, design: LayerDesign, attack: AttackModel, x0: float):
    """``(x_dot, z_dot)`` of the sampled-data system; ``z_dot`` never sees the attack."""
    d = evaluate(attack, design, state.x, x0, state.t)
    if not (np.all(np.isfinite(state.x)) and np.all(np.isfinite(state.z))):
        raise SimulationError(f"non-finite state at t={state.t:g}")
    b = design.beta
    xd = design.A @ state.x + b * design.K @ state.z_bar + design.B * x0 + d
    zd = design.H @ state.z - b * design.G @ state.x_bar + b * design.D * x0
    return xd, zd


def derivative_error_coords(x_tilde, z, e_x, e_z, d, design: LayerDesign):
    """Same right-hand side written in consensus-error coordinates."""
    b = design.beta
    xd = design.A @ x_tilde + b * design.K @ z - b * design.K @ e_z + d
    zd = design.H @ z - b * design.G @ x_tilde + b * design.G @ e_x
    return xd, zd


def _trigger_events(state: SimState, design, params, mode, x0):
    """Evaluate the active condition(s); return new holds and fired events."""
    xb, zb = state.x_bar, state.z_bar
    ts = state.trigger
    events = []
    if mode is None or state.t == 0.0:
        return xb, zb, ts, events
    t = state.t
    if mode == TriggerMode.DYNAMIC:
        lx, thx, fx = physical_condition(params, design, state.e_x, ts.eta)
        lz, thz, fz = auxiliary_condition(params, design, state.e_z, ts.nu)
        if fx:
            events.append(EventRecord(t, "physical", t - ts.last_event_physical, lx, thx))
            xb = state.x.copy()
            ts = replace(ts, last_event_physical=t)
        if fz:
            events.append(EventRecord(t, "auxiliary", t - ts.last_event_auxiliary, lz, thz))
            zb = state.z.copy()
            ts = replace(ts, last_event_auxiliary=t)
    else:
        lhs, rhs, fire = single_condition(design, params, state.x_tilde(x0), state.z, state.e_x, state.e_z)
        if fire:
            events.append(EventRecord(t, "joint", t - ts.last_event_joint, lhs, rhs))
            xb = state.x.copy()
            zb = state.z.copy()
            ts = replace(ts, last_event_joint=t, last_event_physical=t, last_event_auxiliary=t)
    return xb, zb, ts, events


def step(state: SimState, design: LayerDesign, attack: AttackModel, trigger_mode: Optional[TriggerMode],
         params: Optional[TriggerParams], dt: float, x0: float):
    """One forward-Euler step; returns ``(new_state, fired_events)``.

    ``trigger_mode=None`` runs the layers with frozen holds (used for the
    decoupled ``beta = 0`` case). ``t = 0`` is the seeded transmission and
    never fires.
    """
    xb, zb, ts, events = _trigger_events(state, design, params, trigger_mode, x0)
    held = replace(state, x_bar=xb, z_bar=zb, trigger=ts)
    xd, zd = derivative(held, design, attack, x0)
    if params is not None:
        ts = internal_step(ts, held.e_x, held.e_z, params, dt)
    x = held.x + dt * xd
    z = held.z + dt * zd
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
        raise SimulationError(f"non-finite state after step at t={state.t:g}")
    return SimState(state.t + dt, x, z, xb, zb, ts), events


@dataclass
class TrajectoryLog:
    n: int
    stride: int
    data: np.ndarray

    def columns(self) -> list[str]:
        n = self.n
        cols = ["t"]
        for prefix in ("x", "z", "x_bar", "z_bar"):
            cols += [f"{prefix}{i + 1}" for i in range(n)]
        cols += ["eta", "nu"]
        cols += [f"d{i + 1}" for i in range(n)]
        cols += ["norm_xdot", "norm_zdot", "V", "U"]
        return cols

    @property
    def t(self) -> np.ndarray:
        return self.data[:, 0]

    def _block(self, k: int) -> np.ndarray:
        return self.data[:, 1 + k * self.n: 1 + (k + 1) * self.n]

    @property
    def x(self) -> np.ndarray:
        return self._block(0)

    @property
    def z(self) -> np.ndarray:
        return self._block(1)

    @property
    def x_bar(self) -> np.ndarray:
        return self._block(2)

    @property
    def z_bar(self) -> np.ndarray:
        return self._block(3)

    @property
    def eta(self) -> np.ndarray:
        return self.data[:, 1 + 4 * self.n]

    @property
    def nu(self) -> np.ndarray:
        return self.data[:, 2 + 4 * self.n]

    @property
    def d(self) -> np.ndarray:
        return self.data[:, 3 + 4 * self.n: 3 + 5 * self.n]

    @property
    def norm_xdot(self) -> np.ndarray:
        return self.data[:, 3 + 5 * self.n]

    @property
    def norm_zdot(self) -> np.ndarray:
        return self.data[:, 4 + 5 * self.n]

    @property
    def V(self) -> np.ndarray:
        return self.data[:, 5 + 5 * self.n]

    @property
    def U(self) -> np.ndarray:
        return self.data[:, 6 + 5 * self.n]


@dataclass
class EventLog:
    data: np.ndarray  # columns: time, layer code, gap, lhs, threshold

    LAYERS = ("physical", "auxiliary", "joint")

    def _mask(self, layer: str) -> np.ndarray:
        code = self.LAYERS.index(layer)
        return self.data[:, 1] == code

    def times(self, layer: str) -> np.ndarray:
        return self.data[self._mask(layer), 0]

    def gaps(self, layer: str) -> np.ndarray:
        return self.data[self._mask(layer), 2]

    def count(self, layer: str) -> int:
        return int(np.sum(self._mask(layer)))

    def min_gap(self, layer: str) -> Optional[float]:
        g = self.gaps(layer)
        return float(g.min()) if g.size else None

    def __len__(self) -> int:
        return self.data.shape[0]


@dataclass
class RunResult:
    trajectory: TrajectoryLog
    events: EventLog
    summary: dict
    config: dict = field(default_factory=dict)


def _mode_code(mode: Optional[TriggerMode], design: LayerDesign) -> int:
    if mode is None or design.beta == 0:
        return K.MODE_NONE
    return K.MODE_SINGLE if TriggerMode(mode) == TriggerMode.SINGLE else K.MODE_DYNAMIC


def _attack_arrays(attack: AttackModel, n: int):
    if attack.kind == "tabulated":
        d = attack.table_d
        if d.shape[1] != n:
            raise ValueError(f"attack table has {d.shape[1]} columns, expected {n}")
        return K.ATTACK_TABLE, np.ascontiguousarray(attack.table_t), np.ascontiguousarray(d)
    code = K.ATTACK_OFFSET if attack.kind == "offset_steering" else K.ATTACK_NONE
    return code, np.zeros(1), np.zeros((1, n))


def run(config: SimConfig, design: LayerDesign, attack: AttackModel, trigger_mode: Optional[TriggerMode],
        params: Optional[TriggerParams], meta: Optional[dict] = None) -> RunResult:
    """Integrate the full horizon; deterministic for a fixed config."""
    n = design.n
    mode = _mode_code(trigger_mode, design)
    if mode != K.MODE_NONE and params is None:
        raise ValueError("coupled runs need trigger parameters")
    if mode == K.MODE_SINGLE and params.kappa is None:
        raise ValueError("single-condition mode needs kappa")
    x, z = config.initial_vectors(n)
    x_init, z_init = x.copy(), z.copy()
    xb, zb = x.copy(), z.copy()
    eta0 = params.eta0 if params is not None else 0.0
    nu0 = params.nu0 if params is not None else 0.0
    scal = np.zeros(K.N_SCAL)
    scal[K.S_ETA] = eta0
    scal[K.S_NU] = nu0
    stats = K.new_stats()
    stats[K.T_MIN_ETA] = eta0
    stats[K.T_MIN_NU] = nu0

    coef = np.zeros(K.N_COEF)
    coef[K.C_SIGMA1] = params.sigma1 if params is not None else 0.0
    coef[K.C_SIGMA2] = params.sigma2 if params is not None else 0.0
    if mode != K.MODE_NONE:
        kc = kernel_coefficients(params, design)
        names = ["PHYS_NUM", "PHYS_CONST", "PHYS_DEN", "AUX_NUM", "AUX_CONST", "AUX_DEN",
                 "SW_Z", "SW_X", "KAPPA", "SA_X", "SA_Z", "S_CONST"]
        keys = ["phys_num", "phys_const", "phys_den", "aux_num", "aux_const", "aux_den",
                "single_wz", "single_wx", "single_kappa", "single_ax", "single_az", "single_const"]
        for nm, key in zip(names, keys):
            coef[getattr(K, "C_" + nm)] = kc[key]
    track = mode == K.MODE_DYNAMIC and attack.active
    if track:
        g1, g2 = ellipse_axes(params, design)
        coef[K.C_G1], coef[K.C_G2], coef[K.C_TRACK] = g1, g2, 1.0
    else:
        coef[K.C_G1] = coef[K.C_G2] = 1.0
    akind, tab_t, tab_d = _attack_arrays(attack, n)

    nsteps = config.nsteps
    stride = int(config.decimation)
    ncols = 5 * n + 7
    mats = [np.ascontiguousarray(m, dtype=float) for m in
            (design.A, design.H, design.K, design.G, design.B, design.D, design.Px, design.Pz)]
    traj_parts, ev_parts = [], []
    k = 0
    status = 0
    while True:
        k_stop = min(k + CHUNK_STEPS, nsteps)
        span = k_stop - k + 1
        traj = np.empty((span // stride + 2, ncols))
        ev = np.empty((2 * span + 2, 5))
        rows, nev, status, k_reached = K.advance(
            k, k_stop, nsteps, config.dt, float(config.x0), float(design.beta), *mats,
            x, z, xb, zb, scal, stats, coef, mode, akind, float(attack.x_ad), tab_t, tab_d,
            config.integrator == "rk4", stride, traj, ev,
        )
        traj_parts.append(traj[:rows].copy())
        ev_parts.append(ev[:nev].copy())
        if status != 0 or k_reached >= nsteps:
            k = k_reached
            break
        k = k_reached

    trajectory = TrajectoryLog(n, stride, np.vstack(traj_parts) if traj_parts else np.empty((0, ncols)))
    events = EventLog(np.vstack(ev_parts) if ev_parts else np.empty((0, 5)))
    summary = _summarise(config, design, attack, trigger_mode if mode != K.MODE_NONE else None,
                         params, trajectory, events, stats, x_init, z_init)
    summary["status"] = "ok" if status == 0 else f"aborted: non-finite state at t={k * config.dt:g}"
    result = RunResult(trajectory, events, summary, meta or {})
    if status != 0:
        raise SimulationError(summary["status"], partial=result)
    return result


def _none_if_inf(v: float) -> Optional[float]:
    return None if not math.isfinite(v) else float(v)


def _summarise(config, design, attack, mode, params, traj, events, stats, x_init, z_init) -> dict:
    x0 = float(config.x0)
    xf = traj.x[-1]
    zf = traj.z[-1]
    xavg = traj.x.mean(axis=1)
    layers = ["joint"] if mode == TriggerMode.SINGLE else ["physical", "auxiliary"] if mode else []
    counts = {ly: events.count(ly) for ly in layers}
    gaps = {ly: events.min_gap(ly) for ly in layers}
    Mx = float(stats[K.T_MX])
    Mz = float(stats[K.T_MZ])
    miet = {}
    if mode == TriggerMode.DYNAMIC:
        miet["physical"] = miet_physical(params, design, Mx) if Mx > 0 else None
        miet["auxiliary"] = miet_auxiliary(params, design, Mz) if Mz > 0 else None
    elif mode == TriggerMode.SINGLE:
        miet["joint"] = miet_single(params, design, Mx, Mz) if Mx > 0 and Mz > 0 else None
    certificates = {}
    for ly, tau in miet.items():
        g = gaps[ly]
        certificates[ly] = None if (g is None or tau is None) else bool(g >= tau)
    s = {
        "beta": design.beta,
        "trigger_mode": mode.value if mode else None,
        "attack": attack.kind,
        "n_agents": design.n,
        "dt": config.dt,
        "horizon": config.horizon,
        "steps": config.nsteps,
        "decimation": config.decimation,
        "x0": x0,
        "x_init": x_init.tolist(),
        "z_init": z_init.tolist(),
        "x_final": xf.tolist(),
        "z_final": zf.tolist(),
        "max_abs_x_minus_x0": float(np.max(np.abs(xf - x0))),
        "max_abs_z": float(np.max(np.abs(zf))),
        "x_avg_start": float(xavg[0]),
        "x_avg_end": float(xavg[-1]),
        "x0_minus_x_avg_end": float(x0 - xavg[-1]),
        "event_counts": counts,
        "min_inter_event_time": gaps,
        "M_x": Mx,
        "M_z": Mz,
        "miet_bound": miet,
        "miet_bound_kind": "a-posteriori (M_x, M_z = observed max derivative norms)",
        "miet_certificate": certificates,
        "attack_bound_observed": float(stats[K.T_DMAX]),
        "attack_bound_declared": attack.bound_estimate,
        "min_eta": float(stats[K.T_MIN_ETA]),
        "min_nu": float(stats[K.T_MIN_NU]),
        "V_range": [float(traj.V.min()), float(traj.V.max())],
        "U_range": [float(traj.U.min()), float(traj.U.max())],
        "V_exceeds_U_steps": int(stats[K.T_V_GT_U]),
        "reset_violations": int(stats[K.T_RESET_BAD]),
        "trigger_overshoot": {"physical_or_joint": float(stats[K.T_OVER_X]), "auxiliary": float(stats[K.T_OVER_Z])},
        "trigger_margin_slew": {"physical_or_joint": float(stats[K.T_SLEW_X]), "auxiliary": float(stats[K.T_SLEW_Z])},
        "min_threshold": {"physical_or_joint": _none_if_inf(stats[K.T_MIN_THR_X]),
                          "auxiliary": _none_if_inf(stats[K.T_MIN_THR_Z])},
    }
    if mode == TriggerMode.DYNAMIC and attack.active:
        g1, g2 = ellipse_axes(params, design)
        entered = bool(stats[K.T_ENTERED] > 0.5)
        s["ultimate_bound"] = {
            "g1": g1,
            "g2": g2,
            "entered": entered,
            "t_entry": float(stats[K.T_T_ENTRY]) if entered else None,
            "U_entry": float(stats[K.T_U_ENTRY]) if entered else None,
            "max_U_excess_after_entry": float(stats[K.T_MAX_EXCESS]) if entered else None,
            "max_abs_Udot": float(stats[K.T_MAX_UDOT]),
            "max_ellipse_ratio_after_entry": float(stats[K.T_MAX_RATIO]) if entered else None,
            "started_inside": bool(stats[K.T_START_IN] > 0.5),
            "U_start": float(traj.U[0]),
            "U_max": float(stats[K.T_MAX_U]),
            "max_eta_plus_nu": float(stats[K.T_MAX_EN]),
            # sup of V over the ellipse, from the largest eigenvalues of Px, Pz
            "V_ellipse_max": max(float(np.linalg.eigvalsh(design.Px).max()) * g1**2,
                                 float(np.linalg.eigvalsh(design.Pz).max()) * g2**2),
        }
    if params is not None and mode is not None:
        s["omega"] = params.omega(design)
    return s


def invariant_checks(summary: dict) -> dict:
    """Hard per-run invariants evaluated from a run summary."""
    out = {
        "eta_nonnegative": summary["min_eta"] >= 0,
        "nu_nonnegative": summary["min_nu"] >= 0,
        "V_le_U": summary["V_exceeds_U_steps"] == 0,
        "reset_identity": summary["reset_violations"] == 0,
    }
    for layer, ok in summary["miet_certificate"].items():
        if ok is not None:
            out[f"miet_{layer}"] = ok
    ub = summary.get("ultimate_bound")
    if ub:
        slack = 10.0 * summary["dt"] * ub["max_abs_Udot"]
        if ub["entered"]:
            out["ultimate_bound"] = ub["max_U_excess_after_entry"] <= slack
    return out


def hypothesis_diagnostics(summary: dict) -> dict:
    """Soft checks whose guarantee needs ``||d|| <= d_bar`` to actually hold.

    Reported, never fatal: the declared bound is an input assumption that the
    attack itself may violate.
    """
    out = {}
    declared = summary.get("attack_bound_declared")
    if declared is not None and summary["attack"] != "none":
        out["attack_within_declared_bound"] = summary["attack_bound_observed"] <= declared
    ub = summary.get("ultimate_bound")
    if ub and ub["started_inside"]:
        # no crossing to anchor on; U should stay in the level set covering the ellipse
        slack = 10.0 * summary["dt"] * ub["max_abs_Udot"]
        cap = max(ub["U_start"], ub["V_ellipse_max"] + ub["max_eta_plus_nu"])
        out["ultimate_bound_level_set"] = ub["U_max"] <= cap + slack
    return out


# ---------------------------------------------------------------- writers

def _fmt(v: float) -> str:
    return repr(float(v))


def _header(meta: dict) -> str:
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":"))
    return f"# config: {blob}\n"


def trajectory_csv(traj: TrajectoryLog, meta: dict) -> str:
    buf = io.StringIO()
    buf.write(_header(meta))
    buf.write(f"# decimation: {traj.stride}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(traj.columns())
    for row in traj.data:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def events_csv(events: EventLog, meta: dict) -> str:
    buf = io.StringIO()
    buf.write(_header(meta))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time", "layer", "gap_since_last", "lhs", "threshold"])
    for t, code, gap, lhs, thr in events.data:
        w.writerow([_fmt(t), LAYER_NAMES[int(code)], _fmt(gap), _fmt(lhs), _fmt(thr)])
    return buf.getvalue()


def write_atomic(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
