"""File formats: scenarios (YAML), logs/metrics/tables (CSV), decoder weights and datasets (numeric text).

Floats are written with ``repr`` so every file round-trips exactly.
"""
from __future__ import annotations

import csv
import io as _io
import os
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from .constraints import KinematicLimits, Scene
from .learner import Demonstration
from .policy import CostWeights, TrainedDecoder
from .simulator import LOG_COLUMNS, PlannerConfig, RunMetrics, Scenario, Script, SimConfig, TrajectoryLog

METRIC_COLUMNS = ("occlusion_time", "acc_mean", "acc_min", "acc_max", "collision_count", "success",
                  "planner_failures", "duration")
TABLE_COLUMNS = ("scenario", "arm", "seed", "occlusion_time", "success", "acc_mean", "acc_min", "acc_max",
                 "collision_count", "planner_failures", "mean_plan_time_s")
CURVE_COLUMNS = ("epoch", "loss", "ratio_to_initial")
DATASET_FIELDS = ("robot_p[2]", "robot_v[2]", "robot_a[2]", "target_p[2]", "target_v[2]", "radius", "cost",
                  "n_obs", "m", "obstacle_p[2*n_obs]", "obstacle_v[2*n_obs]", "expert[2*m] (x0, y0, x1, y1, ...)")


class ScenarioError(ValueError):
    pass


def atomic_write(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as f:
        f.write(text)
    os.replace(tmp, path)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


# ---------------------------------------------------------------------------
# scenarios


def _script_dict(s: Script) -> dict:
    return {"waypoints": [list(p) for p in s.waypoints], "speed": float(s.speed), "loop": bool(s.loop)}


def scenario_to_dict(sc: Scenario) -> dict:
    pc = sc.planner
    return {
        "name": sc.name,
        "robot_start": {"p": list(sc.robot_start[:2]), "v": list(sc.robot_start[2:])},
        "target": _script_dict(sc.target),
        "obstacles": [_script_dict(o) for o in sc.obstacles],
        "radius": float(sc.radius),
        "limits": {"v_max": float(sc.limits.v_max), "a_max": float(sc.limits.a_max)},
        "planner": {
            "n": pc.n, "weights": asdict(pc.weights), "seed": pc.seed, "K": pc.K, "rho": pc.rho,
            "coeff_std": pc.coeff_std, "q_std": list(pc.q_std), "n_obs": pc.n_obs, "degree": pc.degree,
            "m": pc.m, "horizon_s": pc.horizon_s, "basis_family": pc.basis_family,
        },
        "sim": asdict(sc.sim),
    }


def _script(d) -> Script:
    return Script(tuple(map(tuple, d["waypoints"])), float(d.get("speed", 0.0)), bool(d.get("loop", False)))


def scenario_from_dict(d: dict) -> Scenario:
    try:
        rs = d.get("robot_start", {})
        p, v = rs.get("p", [0.0, 0.0]), rs.get("v", [0.0, 0.0])
        pd = dict(d.get("planner", {}))
        if "weights" in pd:
            pd["weights"] = CostWeights(**pd["weights"])
        if "q_std" in pd:
            pd["q_std"] = tuple(float(x) for x in pd["q_std"])
        lim = d.get("limits", {})
        return Scenario(
            name=str(d.get("name", "scenario")),
            robot_start=(p[0], p[1], v[0], v[1]),
            target=_script(d["target"]),
            obstacles=tuple(_script(o) for o in d.get("obstacles", []) or []),
            radius=float(d.get("radius", 0.5)),
            limits=KinematicLimits(float(lim.get("v_max", 3.0)), float(lim.get("a_max", 3.0))),
            planner=PlannerConfig(**pd),
            sim=SimConfig(**d.get("sim", {})),
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ScenarioError(f"invalid scenario: {exc}") from exc


def dump_scenario(sc: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(sc), sort_keys=False)


def parse_scenario(text: str) -> Scenario:
    try:
        d = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"scenario is not valid YAML: {exc}") from exc
    if not isinstance(d, dict):
        raise ScenarioError("scenario must be a mapping")
    return scenario_from_dict(d)


def load_scenario(path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    return parse_scenario(text)


def save_scenario(sc: Scenario, path) -> None:
    atomic_write(path, dump_scenario(sc))


# ---------------------------------------------------------------------------
# csv files


def _csv(header, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([v if isinstance(v, str) else _fmt(v) for v in r])
    return buf.getvalue()


def dump_log(log: TrajectoryLog) -> str:
    return f"# dt={log.dt!r}\n" + _csv(LOG_COLUMNS, log.rows)


def parse_log(text: str) -> TrajectoryLog:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# dt="):
        raise ValueError("log is missing its '# dt=' line")
    dt = float(lines[0][5:])
    reader = csv.reader(lines[1:])
    header = next(reader)
    if tuple(header) != LOG_COLUMNS:
        raise ValueError("unexpected log header")
    ints = {0, 10, 11, 13, 14}
    rows = [tuple(int(v) if i in ints else float(v) for i, v in enumerate(r)) for r in reader]
    return TrajectoryLog(dt, rows)


def metrics_row(m: RunMetrics) -> tuple:
    return (m.occlusion_time, m.acc_mean, m.acc_min, m.acc_max, m.collision_count, m.success,
            m.planner_failures, m.duration)


def dump_metrics(m: RunMetrics) -> str:
    return _csv(METRIC_COLUMNS, [metrics_row(m)])


def parse_metrics(text: str) -> RunMetrics:
    rows = list(csv.reader(text.splitlines()))
    if tuple(rows[0]) != METRIC_COLUMNS or len(rows) != 2:
        raise ValueError("unexpected metrics file layout")
    r = rows[1]
    return RunMetrics(float(r[0]), float(r[1]), float(r[2]), float(r[3]), int(r[4]), bool(int(r[5])),
                      planner_failures=int(r[6]), duration=float(r[7]))


def dump_timing(plan_times) -> str:
    return _csv(("cycle", "plan_time_s"), [(i, t) for i, t in enumerate(plan_times)])


def dump_table(rows) -> str:
    return _csv(TABLE_COLUMNS, rows)


def parse_table(text: str) -> list[dict]:
    rows = list(csv.DictReader(text.splitlines()))
    return rows


def dump_curve(curve) -> str:
    c0 = curve[0] if curve else float("nan")
    return _csv(CURVE_COLUMNS, [(i, c, c / c0 if c0 else float("nan")) for i, c in enumerate(curve)])


def parse_curve(text: str) -> list[float]:
    return [float(r["loss"]) for r in csv.DictReader(text.splitlines())]


# ---------------------------------------------------------------------------
# decoder weights


def dump_decoder(dec: TrainedDecoder) -> str:
    head = f"# trackproj-decoder n_xi={dec.n_xi} n_out={dec.n_out} n_in={dec.weights.shape[1]} noise_std={dec.noise_std!r}\n"
    body = "\n".join(" ".join(repr(float(v)) for v in row) for row in dec.weights)
    return head + body + "\n"


def parse_decoder(text: str) -> TrainedDecoder:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# trackproj-decoder"):
        raise ValueError("not a decoder weights file")
    meta = dict(kv.split("=") for kv in lines[0].split()[2:])
    w = np.array([[float(v) for v in ln.split()] for ln in lines[1:] if ln.strip()])
    return TrainedDecoder(int(meta["n_xi"]), w, float(meta["noise_std"]))


# ---------------------------------------------------------------------------
# demonstration datasets


def demo_record(d: Demonstration) -> str:
    s = d.scene
    vals = [*s.robot_p, *s.robot_v, *s.robot_a, *s.target_p, *s.target_v, s.radius, d.cost]
    vals += [s.n_obs, d.expert.shape[0]]
    vals += list(s.obstacle_p.reshape(-1)) + list(s.obstacle_v.reshape(-1)) + list(d.expert.reshape(-1))
    return ",".join(_fmt(v) for v in vals)


def parse_demo_record(line: str) -> Demonstration:
    v = line.split(",")
    f = [float(x) for x in v[:12]]
    n_obs, m = int(v[12]), int(v[13])
    rest = np.array([float(x) for x in v[14:]])
    if rest.size != 4 * n_obs + 2 * m:
        raise ValueError("dataset record has the wrong number of fields")
    op = rest[: 2 * n_obs].reshape(n_obs, 2)
    ov = rest[2 * n_obs : 4 * n_obs].reshape(n_obs, 2)
    expert = rest[4 * n_obs :].reshape(m, 2)
    scene = Scene(f[0:2], f[2:4], f[4:6], f[6:8], f[8:10], op, ov, f[10])
    return Demonstration(scene, expert, f[11])


def dump_dataset(demos) -> str:
    head = "# trackproj-dataset fields: " + ", ".join(DATASET_FIELDS) + "\n"
    return head + "".join(demo_record(d) + "\n" for d in demos)


def parse_dataset(text: str) -> list[Demonstration]:
    return [parse_demo_record(ln) for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
