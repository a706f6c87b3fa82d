"""Command-line entry point: ``trackproj {simulate,gradcheck,train,benchmark,project}``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import yaml

from . import formats
from .policy import POLICIES

ARMS = POLICIES


def _err(msg: str) -> None:
    print(f"trackproj: {msg}", file=sys.stderr)


def _load_decoder(path):
    if path is None:
        return None
    return formats.parse_decoder(Path(path).read_text())


def _write_run(outdir: Path, metrics, log, plan_times) -> None:
    formats.atomic_write(outdir / "log.csv", formats.dump_log(log))
    formats.atomic_write(outdir / "metrics.csv", formats.dump_metrics(metrics))
    formats.atomic_write(outdir / "timing.csv", formats.dump_timing(plan_times))


def cmd_simulate(args) -> int:
    from .simulator import build_planner, run_episode

    try:
        sc = formats.load_scenario(args.scenario)
        if args.seed is not None:
            sc = sc.with_seed(args.seed)
        decoder = _load_decoder(args.decoder)
        planner = build_planner(sc, args.policy, decoder)
    except (formats.ScenarioError, ValueError, OSError) as exc:
        _err(str(exc))
        return 1
    try:
        metrics, log, plan_times = run_episode(sc, planner)
    except Exception as exc:  # hard failure inside the planner or solver
        _err(f"planner hard failure: {exc}")
        return 2
    _write_run(Path(args.output), metrics, log, plan_times)
    if plan_times and metrics.planner_failures == len(plan_times):
        _err("every planning cycle failed")
        return 2
    print(f"occlusion_time={metrics.occlusion_time:.3f}s collisions={metrics.collision_count} "
          f"success={metrics.success} mean_plan_time={metrics.mean_plan_time:.4f}s")
    return 0


def cmd_gradcheck(args) -> int:
    from .basis import build_basis
    from .constraints import KinematicLimits
    from .instances import random_instance
    from .projection import make_workspace
    from .unrolled import COORD_GROUPS, grad_check

    basis = build_basis(family=args.basis)
    ws = make_workspace(basis, KinematicLimits(3.0, 3.0), args.n_obs, args.rho, 100)
    rng = np.random.default_rng(args.seed)
    worst = {g: 0.0 for g in COORD_GROUPS}
    excluded = 0
    for _ in range(args.instances):
        inst = random_instance(rng, basis, args.n_obs, warm_noise=0.1)
        rep = grad_check(ws, inst.xi_bar, inst.q, inst.scene, inst.warm, h=args.h, K_train=args.k)
        for g, v in rep.group_max().items():
            worst[g] = max(worst[g], v)
        excluded += int(rep.excluded.sum())
    print(f"{'group':<10} {'max_rel_err':>12}")
    for g in COORD_GROUPS:
        print(f"{g:<10} {worst[g]:>12.3e}")
    print(f"boundary-excluded coordinates: {excluded}")
    ok = max(worst.values()) <= args.tol
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def _train_settings(path):
    from .learner import TrainConfig

    d = {} if path is None else (yaml.safe_load(Path(path).read_text()) or {})
    keys = {"lr", "epochs", "batch_size", "K_train", "c_pen", "seed"}
    cfg = TrainConfig(**{k: v for k, v in d.items() if k in keys})
    return cfg, d


def cmd_train(args) -> int:
    from .learner import TrainingError, generate_demonstrations, train
    from .policy import TrainedDecoder
    from .simulator import build_planner

    try:
        cfg, raw = _train_settings(args.config)
    except (OSError, ValueError, TypeError, yaml.YAMLError) as exc:
        _err(f"bad training config: {exc}")
        return 1
    if args.generate is not None:
        suite = [formats.load_scenario(p) for p in sorted(Path(args.generate).glob("*.yaml"))]
        demos = generate_demonstrations(suite, int(raw.get("oracle_n", 512)), int(raw.get("stride", 1)),
                                        raw.get("duration"), tuple(raw.get("q_std", (0.0, 0.0, 0.0, 0.0))))
        if args.save_dataset:
            formats.atomic_write(args.save_dataset, formats.dump_dataset(demos))
        ref = suite[0] if suite else None
    else:
        try:
            demos = formats.parse_dataset(Path(args.dataset).read_text())
        except (OSError, ValueError) as exc:
            _err(f"cannot read dataset: {exc}")
            return 1
        ref = None
    if not demos:
        _err("empty dataset")
        return 1
    if ref is None:
        from .simulator import Scenario, Script

        ref = Scenario("train", (0, 0, 0, 0), Script(((0.0, 0.0),)))
    if args.max_demos:
        demos = demos[: args.max_demos]
    ws = build_planner(ref).ws
    decoder = TrainedDecoder(ws.n_xi)
    curve_path = Path(args.curve) if args.curve else Path(str(args.output) + ".curve.csv")
    try:
        decoder, curve = train(decoder, demos, cfg, ws)
    except TrainingError as exc:
        if exc.curve:
            formats.atomic_write(curve_path, formats.dump_curve(exc.curve))
        _err(str(exc))
        return 1
    formats.atomic_write(args.output, formats.dump_decoder(decoder))
    formats.atomic_write(curve_path, formats.dump_curve(curve))
    print(f"trained on {len(demos)} demonstrations: loss {curve[0]:.4g} -> {curve[-1]:.4g}")
    return 0


def cmd_benchmark(args) -> int:
    from .simulator import build_planner, run_episode

    paths = sorted(Path(args.suite).glob("*.yaml"))
    if not paths:
        _err(f"no scenarios in {args.suite}")
        return 1
    decoder = _load_decoder(args.decoder)
    arms = args.arms.split(",") if args.arms else [a for a in ARMS if decoder is not None or a in ("base", "raw-unprojected")]
    out = Path(args.output)
    rows, n_ok, n_runs = [], 0, 0
    seeds = range(args.seed, args.seed + args.seeds)
    for p in paths:
        for arm in arms:
            for seed in seeds:
                n_runs += 1
                try:
                    sc = formats.load_scenario(p).with_seed(seed)
                    metrics, log, plan_times = run_episode(sc, build_planner(sc, arm, decoder))
                except Exception as exc:
                    _err(f"{p.name} [{arm}, seed {seed}] failed: {exc}")
                    continue
                n_ok += 1
                _write_run(out / sc.name / f"{arm}_seed{seed}", metrics, log, plan_times)
                rows.append((sc.name, arm, seed, metrics.occlusion_time, metrics.success, metrics.acc_mean,
                             metrics.acc_min, metrics.acc_max, metrics.collision_count, metrics.planner_failures,
                             metrics.mean_plan_time))
    formats.atomic_write(out / "table.csv", formats.dump_table(rows))
    print(f"{n_ok}/{n_runs} runs completed; table at {out / 'table.csv'}")
    return 0 if n_ok else 1


def cmd_project(args) -> int:
    from .constraints import constraint_violations, prune_obstacles
    from .policy import nominal_q, nominal_xi, predict_target
    from .projection import project
    from .simulator import build_planner, initial_world, scene_from_world, synth_lidar

    try:
        sc = formats.load_scenario(args.scenario)
    except formats.ScenarioError as exc:
        _err(str(exc))
        return 1
    planner = build_planner(sc)
    ws, basis = planner.ws, planner.basis
    world = initial_world(sc)
    scene = scene_from_world(world, synth_lidar(world, sc.sim.n_beams, sc.sim.range_max))
    pruned = prune_obstacles(scene, ws.layout.n_obs)
    q = nominal_q(scene, basis)
    rng = np.random.default_rng(args.seed)
    xi_bar = nominal_xi(scene, q, basis) + sc.planner.coeff_std * rng.standard_normal(ws.n_xi)
    tt = predict_target(scene.target_p, scene.target_v, basis)
    res = project(ws, xi_bar, q, pruned, None, tt, K=args.k)
    before = constraint_violations(xi_bar, pruned, q, ws.limits, basis, tt).group_max
    after = constraint_violations(res.xi, pruned, q, ws.limits, basis, tt).group_max
    print(f"{'group':<14} {'before':>10} {'after':>10}")
    for g in before:
        print(f"{g:<14} {before[g]:>10.4f} {after[g]:>10.4f}")
    h = res.residual_history
    print(f"residual |F xi - e|: initial {h[0, 0]:.4g}, after {res.iterations_run} iterations {h[-1, 0]:.4g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trackproj", description="Trajectory-projection planner for target tracking.")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one closed-loop episode")
    s.add_argument("scenario")
    s.add_argument("output", help="output directory for log.csv, metrics.csv, timing.csv")
    s.add_argument("--policy", choices=ARMS, default="base")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--decoder", default=None, help="decoder weights for the trained arms")
    s.set_defaults(func=cmd_simulate)

    g = sub.add_parser("gradcheck", help="compare unrolled gradients with finite differences")
    g.add_argument("--k", type=int, default=10)
    g.add_argument("--instances", type=int, default=5)
    g.add_argument("--h", type=float, default=1e-5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-obs", dest="n_obs", type=int, default=20)
    g.add_argument("--rho", type=float, default=0.2)
    g.add_argument("--basis", default="bernstein", choices=("bernstein", "monomial"))
    g.add_argument("--tol", type=float, default=1e-4)
    g.set_defaults(func=cmd_gradcheck)

    t = sub.add_parser("train", help="fit the affine decoder")
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--dataset", help="demonstration dataset file")
    src.add_argument("--generate", help="directory of scenario files to generate demonstrations from")
    t.add_argument("--config", default=None, help="YAML training settings")
    t.add_argument("--output", required=True, help="decoder weights path")
    t.add_argument("--curve", default=None, help="loss-curve CSV path (default: <output>.curve.csv)")
    t.add_argument("--save-dataset", dest="save_dataset", default=None)
    t.add_argument("--max-demos", dest="max_demos", type=int, default=0)
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("benchmark", help="every scenario x every policy arm")
    b.add_argument("suite")
    b.add_argument("output")
    b.add_argument("--arms", default=None, help=f"comma-separated subset of {','.join(ARMS)}")
    b.add_argument("--decoder", default=None)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds per run")
    b.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("project", help="single-shot projection of a nominal sample")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=100)
    p.set_defaults(func=cmd_project)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return int(args.func(args))


if __name__ == "__main__":
    sys.exit(main())
