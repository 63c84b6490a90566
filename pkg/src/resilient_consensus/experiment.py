"""Scenario files, metrics, beta sweeps and reproduction reports."""
from __future__ import annotations

import copy
import io
import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .attack import AttackModel
from .design import (
    LayerDesign,
    TriggerParams,
    build_design,
    default_c_constants,
    design_report,
    params_validate,
)
from .simulator import (
    RunResult,
    SimConfig,
    TrajectoryLog,
    events_csv,
    hypothesis_diagnostics,
    invariant_checks,
    run,
    trajectory_csv,
    write_atomic,
)
from .topology import AgentGraph, LayerPair, system_matrix
from .triggers import TriggerMode

log = logging.getLogger(__name__)

STEADY_FRACTION = 0.1
PLOT_STRIDE = 10


class ConfigError(ValueError):
    """Scenario config failed to parse or validate."""


def bundled_scenarios() -> list[str]:
    root = resources.files("resilient_consensus") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_config(path_or_name) -> tuple[dict, Path]:
    """Read a scenario by path, or by bundled scenario name."""
    p = Path(path_or_name)
    if p.is_file():
        return json.loads(p.read_text()), p.resolve().parent
    res = resources.files("resilient_consensus") / "scenarios" / f"{path_or_name}.json"
    if res.is_file():
        return json.loads(res.read_text()), Path(str(res)).parent
    raise ConfigError(f"no scenario file or bundled scenario named {path_or_name!r}")


def _scalar(section: dict, key: str, default=None, required=False):
    if key in section and section[key] is not None:
        return float(section[key])
    if required:
        raise ConfigError(f"missing required parameter {key!r}")
    return default


@dataclass
class Scenario:
    name: str
    config: dict
    layers: LayerPair
    attack: AttackModel
    mode: TriggerMode
    sim: SimConfig
    sweep: list = field(default_factory=list)
    reference: dict = field(default_factory=dict)
    base_dir: Optional[Path] = None

    @classmethod
    def from_dict(cls, cfg: dict, base_dir: Optional[Path] = None) -> "Scenario":
        cfg = copy.deepcopy(cfg)
        try:
            g = cfg["graph"]
            phys = AgentGraph.from_config(g)
            aux_cfg = g.get("auxiliary")
            if aux_cfg:
                aux = AgentGraph.from_config({"n_agents": phys.n_agents, **aux_cfg})
            else:
                aux = phys
            layers = LayerPair(phys, aux)
            attack = AttackModel.from_config(cfg.get("attack"), base_dir)
            mode = TriggerMode(cfg.get("trigger", {}).get("mode", TriggerMode.DYNAMIC.value))
            s = cfg.get("sim", {})
            sim = SimConfig(
                dt=float(s.get("dt", 1e-5)),
                horizon=float(s.get("horizon", 20.0)),
                x0=float(s["x0"]),
                x_init=s.get("x_init"),
                z_init=s.get("z_init"),
                rng_seed=s.get("rng_seed"),
                decimation=int(s.get("decimation", 100)),
                integrator=s.get("integrator", "euler"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid scenario: {exc}") from exc
        return cls(cfg.get("name", "scenario"), cfg, layers, attack, mode, sim,
                   [float(b) for b in cfg.get("sweep") or []], cfg.get("reference", {}), base_dir)

    @classmethod
    def load(cls, path_or_name) -> "Scenario":
        cfg, base = load_config(path_or_name)
        return cls.from_dict(cfg, base)

    @property
    def beta(self) -> float:
        return float(self.config.get("design", {}).get("beta", 1.0))

    def build_design(self, beta: Optional[float] = None) -> LayerDesign:
        dcfg = self.config.get("design", {})
        A, B = system_matrix(self.layers.physical)
        H = dcfg.get("H")
        if H is None and self.layers.auxiliary is not self.layers.physical:
            H, _ = system_matrix(self.layers.auxiliary)
        return build_design(A, B, H=H, K=dcfg.get("K"), G=dcfg.get("G"),
                            beta=self.beta if beta is None else float(beta))

    def resolve(self, beta: Optional[float] = None) -> tuple[LayerDesign, Optional[TriggerParams]]:
        """Validated ``(design, params)``; params is ``None`` when decoupled."""
        try:
            design = self.build_design(beta)
        except ValueError as exc:
            raise ConfigError(f"design rejected: {exc}") from exc
        if design.beta == 0:
            return design, None
        params = self.trigger_params(design)
        rep = params_validate(params, design, require_kappa=self.mode == TriggerMode.SINGLE)
        if not rep.ok:
            lines = "; ".join(f"{c.name} (slack {c.value:.6g})" if c.value is not None else c.name
                              for c in rep.failures())
            raise ConfigError(f"parameter validation failed at beta={design.beta:g}: {lines}")
        return design, params

    def trigger_params(self, design: LayerDesign) -> TriggerParams:
        """Trigger constants for ``design``; c-constants default per beta."""
        dcfg = self.config.get("design", {})
        c1, c2, c3 = default_c_constants(design)
        return TriggerParams(
            c1=_scalar(dcfg, "c1", c1),
            c2=_scalar(dcfg, "c2", c2),
            c3=_scalar(dcfg, "c3", c3),
            epsilon=_scalar(dcfg, "epsilon", required=True),
            mu=_scalar(dcfg, "mu", required=True),
            d_bar=self._d_bar(),
            sigma1=_scalar(dcfg, "sigma1", 1.0),
            sigma2=_scalar(dcfg, "sigma2", 1.0),
            kappa=_scalar(dcfg, "kappa", required=self.mode == TriggerMode.SINGLE),
            eta0=_scalar(dcfg, "eta0", 0.0),
            nu0=_scalar(dcfg, "nu0", 0.0),
            omega_bound=dcfg.get("omega_bound", "px"),
        )

    def _d_bar(self) -> float:
        a = self.config.get("attack", {}) or {}
        d = self.config.get("design", {})
        va, vd = a.get("d_bar"), d.get("d_bar")
        if va is not None and vd is not None and float(va) != float(vd):
            raise ConfigError(f"conflicting d_bar values ({va} in attack, {vd} in design)")
        value = va if va is not None else vd
        if value is None:
            raise ConfigError("d_bar (declared attack-norm bound) is required for coupled runs")
        return float(value)

    def resolved_config(self, beta: Optional[float] = None) -> dict:
        """The config with every defaulted scalar filled in, for replay headers."""
        cfg = copy.deepcopy(self.config)
        design, params = self.resolve(beta)
        dcfg = cfg.setdefault("design", {})
        dcfg["beta"] = design.beta
        if params is not None:
            for k, v in params.to_dict().items():
                if v is not None:
                    dcfg[k] = v
            cfg.setdefault("attack", {})["d_bar"] = params.d_bar
            dcfg.pop("d_bar", None)
        cfg["sweep"] = []
        att = cfg.get("attack") or {}
        if att.get("kind") == "tabulated" and self.base_dir is not None:
            att["table"] = str((self.base_dir / att["table"]).resolve())
        return cfg


def mean_state_trace(traj: TrajectoryLog) -> tuple[np.ndarray, np.ndarray]:
    """``(t, x_avg)`` with the log's own time stamps."""
    if traj.data.shape[0] == 0:
        raise ValueError("empty trajectory")
    return traj.t.copy(), traj.x.mean(axis=1)


def steady_state_error(traj: TrajectoryLog, x0: float, horizon: float) -> float:
    """Mean of ``|x0 - x_avg|`` over the final tenth of the horizon."""
    t, xavg = mean_state_trace(traj)
    mask = t >= (1.0 - STEADY_FRACTION) * horizon - 1e-12
    return float(np.mean(np.abs(x0 - xavg[mask])))


def metrics(result: RunResult, sim: SimConfig) -> dict:
    s = result.summary
    inv = invariant_checks(s)
    for layer, gap in s["min_inter_event_time"].items():
        if gap is not None:
            inv[f"min_gap_{layer}_ge_dt"] = gap >= sim.dt * (1 - 1e-9)
    return {
        "beta": s["beta"],
        "final_max_abs_x_minus_x0": s["max_abs_x_minus_x0"],
        "final_max_abs_z": s["max_abs_z"],
        "x0_minus_x_avg_end": s["x0_minus_x_avg_end"],
        "steady_state_abs_error": steady_state_error(result.trajectory, sim.x0, sim.horizon),
        "event_counts": s["event_counts"],
        "min_inter_event_time": s["min_inter_event_time"],
        "miet_bound": s["miet_bound"],
        "V_range": s["V_range"],
        "U_range": s["U_range"],
        "invariants": inv,
        "invariants_ok": all(inv.values()),
        "diagnostics": hypothesis_diagnostics(s),
    }


def plot_csv(result: RunResult, x0: float, stride: int = PLOT_STRIDE) -> str:
    """Tidy plot data: one observation per row."""
    traj = result.trajectory
    beta = result.summary["beta"]
    t, xavg = mean_state_trace(traj)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["beta", "t", "series", "agent", "value"])
    idx = list(range(0, len(t), stride))
    if idx[-1] != len(t) - 1:
        idx.append(len(t) - 1)
    for r in idx:
        tt = repr(float(t[r]))
        for i in range(traj.n):
            w.writerow([beta, tt, "x", i + 1, repr(float(traj.x[r, i]))])
        for i in range(traj.n):
            w.writerow([beta, tt, "z", i + 1, repr(float(traj.z[r, i]))])
        w.writerow([beta, tt, "x_avg", "", repr(float(xavg[r]))])
        w.writerow([beta, tt, "x0_minus_x_avg", "", repr(float(x0 - xavg[r]))])
    return buf.getvalue()


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def execute(scenario: Scenario, beta: Optional[float] = None, out_dir: Optional[Path] = None) -> tuple[dict, RunResult]:
    """Resolve, run and (optionally) write the artifact files for one run."""
    design, params = scenario.resolve(beta)
    resolved = scenario.resolved_config(beta)
    mode = scenario.mode if design.beta > 0 else None
    result = run(scenario.sim, design, scenario.attack, mode, params, meta=resolved)
    m = metrics(result, scenario.sim)
    m["reference_comparison"] = reference_comparison(scenario.reference, design.beta, m)
    doc = {"scenario": scenario.name, "config": resolved, "summary": result.summary, "metrics": m}
    if out_dir is not None:
        out = Path(out_dir)
        write_atomic(out / "trajectory.csv", trajectory_csv(result.trajectory, resolved))
        write_atomic(out / "events.csv", events_csv(result.events, resolved))
        write_atomic(out / "plot_data.csv", plot_csv(result, scenario.sim.x0))
        write_atomic(out / "summary.json", _dump(doc))
    return doc, result


def reference_comparison(reference: dict, beta: float, m: dict) -> dict:
    """Compare smallest inter-event times against tabulated reference values."""
    table = (reference or {}).get("min_inter_event_time", {})
    factor = float((reference or {}).get("tolerance_factor", 2.0))
    row = table.get(f"{beta:g}")
    if not row:
        return {}
    out = {}
    for layer, ref in row.items():
        got = m["min_inter_event_time"].get(layer)
        ok = got is not None and ref / factor <= got <= ref * factor
        out[layer] = {"observed": got, "reference": ref, "factor": factor, "pass": bool(ok)}
    return out


def run_scenario(path_or_name, out_dir=None, beta: Optional[float] = None) -> dict:
    scen = Scenario.load(path_or_name)
    target = None
    if out_dir is not None:
        target = Path(out_dir) / (scen.name if beta is None else f"{scen.name}_beta{beta:g}")
    doc, _ = execute(scen, beta, target)
    return doc


def _sweep_worker(args):
    cfg, base_dir, beta, out_dir = args
    scen = Scenario.from_dict(cfg, base_dir)
    target = None if out_dir is None else Path(out_dir) / f"{scen.name}_beta{beta:g}"
    doc, _ = execute(scen, beta, target)
    return doc


def sweep_beta(scenario: Scenario, betas: Sequence[float], out_dir=None, workers: int = 1,
               base_dir: Optional[Path] = None) -> dict:
    """Run one scenario across gains; trend checks are soft (PASS/FAIL only)."""
    valid, skipped = [], []
    for b in betas:
        try:
            scenario.resolve(b)
            valid.append(float(b))
        except ConfigError as exc:
            log.warning("skipping beta=%g: %s", b, exc)
            skipped.append({"beta": float(b), "reason": str(exc)})
    jobs = [(scenario.config, base_dir, b, out_dir) for b in valid]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            docs = list(pool.map(_sweep_worker, jobs))
    else:
        docs = [_sweep_worker(j) for j in jobs]
    rows = [d["metrics"] for d in docs]
    report = {"scenario": scenario.name, "betas": valid, "skipped": skipped, "runs": rows}
    coupled = [r for r in rows if r["beta"] > 0]
    table = {}
    for layer in ("physical", "auxiliary", "joint"):
        vals = [(r["beta"], r["min_inter_event_time"].get(layer)) for r in coupled]
        vals = [(b, v) for b, v in vals if v is not None]
        if vals:
            table[layer] = {f"{b:g}": v for b, v in vals}
    report["min_inter_event_table"] = table
    report["steady_state_error"] = {f"{r['beta']:g}": r["steady_state_abs_error"] for r in rows}
    trends = {}
    order = sorted(coupled, key=lambda r: r["beta"])
    for layer, cells in table.items():
        seq = [cells[f"{r['beta']:g}"] for r in order if f"{r['beta']:g}" in cells]
        if len(seq) > 1:
            trends[f"min_gap_{layer}_nonincreasing"] = all(b <= a for a, b in zip(seq, seq[1:]))
    err = [r["steady_state_abs_error"] for r in sorted(rows, key=lambda r: r["beta"])]
    if len(err) > 1:
        trends["steady_error_nonincreasing"] = all(b <= a for a, b in zip(err, err[1:]))
    report["trend_checks"] = trends
    ref = {}
    for r in rows:
        if r.get("reference_comparison"):
            ref[f"{r['beta']:g}"] = r["reference_comparison"]
    report["reference_comparison"] = ref
    report["invariants_ok"] = all(r["invariants_ok"] for r in rows)
    if out_dir is not None:
        write_atomic(Path(out_dir) / f"{scenario.name}_sweep.json", _dump(report))
    return report


def format_run(doc: dict) -> str:
    m = doc["metrics"]
    lines = [f"scenario {doc['scenario']}  beta={m['beta']:g}  status={doc['summary']['status']}"]
    lines.append(f"  final max |x_i - x0| = {m['final_max_abs_x_minus_x0']:.6g}")
    lines.append(f"  final max |z_i|      = {m['final_max_abs_z']:.6g}")
    lines.append(f"  x0 - x_avg(T)        = {m['x0_minus_x_avg_end']:.6g}")
    lines.append(f"  steady-state |x0 - x_avg| = {m['steady_state_abs_error']:.6g}")
    for layer, cnt in m["event_counts"].items():
        gap = m["min_inter_event_time"][layer]
        tau = m["miet_bound"].get(layer)
        gap_s = "-" if gap is None else f"{gap:.5f}"
        tau_s = "-" if tau is None else f"{tau:.3e}"
        lines.append(f"  {layer:9s} events={cnt:6d}  min gap={gap_s}  MIET bound (a-posteriori)={tau_s}")
    for layer, c in m.get("reference_comparison", {}).items():
        lines.append(f"  reference {layer}: observed {c['observed']:.5f} vs {c['reference']:.5f} "
                     f"(x{c['factor']:g}) {'PASS' if c['pass'] else 'FAIL'}")
    for name, ok in m["invariants"].items():
        lines.append(f"  {'PASS' if ok else 'FAIL'}  {name}")
    for name, ok in m["diagnostics"].items():
        lines.append(f"  {'PASS' if ok else 'FAIL'}  {name} (soft, depends on the declared attack bound)")
    return "\n".join(lines)


def format_sweep(rep: dict) -> str:
    lines = [f"sweep {rep['scenario']}  betas={rep['betas']}"]
    for s in rep["skipped"]:
        lines.append(f"  skipped beta={s['beta']:g}: {s['reason']}")
    betas = [b for b in rep["betas"] if b > 0]
    if rep["min_inter_event_table"]:
        lines.append("  smallest inter-event time")
        lines.append("    layer      " + "".join(f"{b:>12g}" for b in betas))
        for layer, cells in rep["min_inter_event_table"].items():
            lines.append(f"    {layer:10s} " + "".join(f"{cells.get(f'{b:g}', math.nan):12.5f}" for b in betas))
    lines.append("  steady-state |x0 - x_avg|")
    for b, e in rep["steady_state_error"].items():
        lines.append(f"    beta={b:>5s}  {e:.6g}")
    for b, comp in rep["reference_comparison"].items():
        for layer, c in comp.items():
            lines.append(f"  reference beta={b} {layer}: {c['observed']:.5f} vs {c['reference']:.5f} "
                         f"{'PASS' if c['pass'] else 'FAIL'}")
    for name, ok in rep["trend_checks"].items():
        lines.append(f"  {'PASS' if ok else 'FAIL'}  {name} (soft)")
    return "\n".join(lines)


def scenario_design_report(scenario: Scenario, beta: Optional[float] = None) -> dict:
    """Design validations at ``beta``; parameter checks run whenever they can be built."""
    design = scenario.build_design(beta)
    params, problem = None, None
    if design.beta > 0:
        try:
            params = scenario.trigger_params(design)
        except ConfigError as exc:
            problem = str(exc)
    rep = design_report(design, params, scenario.reference)
    if problem:
        rep["notes"].append(problem)
        rep["ok"] = False
    return rep
