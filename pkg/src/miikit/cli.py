"""Command-line interface.

Subcommands: ``tableau``, ``integrate``, ``generate``, ``train``,
``evaluate``, ``benchmark``, ``sensitivity``.  Config files are JSON with
sections {"data", "model", "train", "grid"}; all randomness derives from
the seeds recorded there.  The MII_THREADS environment variable caps the
benchmark worker pool.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments, noise, tableau as tb
from .integrators import integrate as _integrate, make_stepper
from .model import load_checkpoint, save_checkpoint
from .systems import get_system
from .training import TrainConfig, flow_error, train


def _load_config(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _write_csv(path_or_stdout, rows: list[dict], fieldnames=None):
    fieldnames = fieldnames or list(rows[0].keys())
    out = open(path_or_stdout, "w", newline="") if path_or_stdout else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if path_or_stdout:
            out.close()


# -- tableau ----------------------------------------------------------------


def cmd_tableau(args) -> int:
    if args.action != "check":
        raise SystemExit(f"unknown tableau action {args.action!r}")
    source = args.name
    if Path(source).exists():
        t = tb.tableau_from_json(Path(source).read_text(), name=Path(source).stem)
    else:
        t = tb.get_tableau(source)
    report = tb.check_properties(t)
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
        return 0
    d = report.to_dict()
    width = max(len(k) for k in d)
    print(f"tableau {report.name} (s = {tb.as_rk(t).s})")
    for key, value in d.items():
        if key == "name":
            continue
        print(f"  {key:<{width}}  {value}")
    return 0


# -- integrate ----------------------------------------------------------------


def cmd_integrate(args) -> int:
    sys_ = get_system(args.system)
    y0 = np.array([float(v) for v in args.y0.split(",")])
    if y0.size != sys_.dim:
        raise SystemExit(f"{args.system} needs {sys_.dim} state components")
    step = make_stepper(sys_, args.method)
    traj = _integrate(step, y0, args.h, args.steps)
    rows = []
    for t, y in zip(traj.times(), traj.points):
        row = {"t": t}
        row.update({f"y{i+1}": y[i] for i in range(y.size)})
        row["H"] = float(sys_.hamiltonian(y))
        rows.append(row)
    _write_csv(args.out, rows)
    return 0


# -- generate ----------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _load_config(args.config)["data"]
    spec = experiments.DataSpec(
        system=cfg["system"],
        n_trajectories=cfg.get("n_trajectories", 30),
        r_min=cfg.get("r_min", 0.3),
        r_max=cfg.get("r_max", 0.6),
        pairs=tuple(tuple(p) for p in cfg.get("pairs", [[0.1, 16]])),
        sigma=cfg.get("sigma", 0.0),
        seed=cfg.get("seed", 0),
        system_params=cfg.get("system_params", {}),
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for ds in experiments.generate_dataset(spec):
        path = out_dir / f"{ds.system}_h{ds.h}_N{ds.n_steps}_sigma{ds.sigma}.npz"
        ds.save(path)
        print(path)
    return 0


# -- train ----------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    if args.data:
        dataset = experiments.DataSet.load(args.data)
    else:
        data_cfg = dict(cfg["data"])
        pairs = data_cfg.pop("pairs", [[0.1, 16]])
        spec = experiments.DataSpec(pairs=(tuple(pairs[0]),), **data_cfg)
        dataset = experiments.generate_dataset(spec)[0]
    model_cfg = cfg.get("model", {})
    train_cfg = TrainConfig(
        hidden=tuple(model_cfg.get("hidden", (32, 32))),
        variant=model_cfg.get("variant", "dense"),
        **cfg["train"],
    )
    result = train(train_cfg, dataset)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "model.ckpt"
    save_checkpoint(result.model, ckpt)
    _write_csv(
        out_dir / "history.csv",
        [
            {"epoch": r["epoch"], "loss": r["loss"], "wall_time": r["seconds"]}
            for r in result.history
        ],
    )
    print(ckpt)
    return 0


# -- evaluate ----------------------------------------------------------------


def cmd_evaluate(args) -> int:
    model = load_checkpoint(args.model)
    sys_ = get_system(args.system)
    pts = experiments.sample_initial_values(
        args.points, sys_.dim, args.r_min, args.r_max, np.random.default_rng(args.seed)
    )
    report = flow_error(model, sys_, pts, args.h)
    row = {
        "system": args.system,
        "method": args.method,
        "h": args.h,
        "N1": args.n1,
        "sigma": args.sigma,
        "seed": args.seed,
        "flow_error": report.e,
        "train_seconds": "",
        "status": "ok",
    }
    _write_csv(args.out, [row], fieldnames=list(experiments.CSV_FIELDS))
    return 0


# -- benchmark ----------------------------------------------------------------


def cmd_benchmark(args) -> int:
    cfg = _load_config(args.config)
    grid = experiments.desk_scale_grid()
    grid.update(cfg.get("grid", {}))
    experiments.run_benchmark(grid, args.out, workers=args.workers)
    print(args.out)
    return 0


# -- sensitivity ----------------------------------------------------------------


def cmd_sensitivity(args) -> int:
    sys_ = get_system(args.system)
    h_list = [float(v) for v in args.h_list.split(",")]
    rows = noise.sensitivity_scan(
        sys_,
        T=args.T,
        sigma2=args.sigma2,
        n_samples=args.samples,
        h_list=h_list,
        n_trajectories=args.trajectories,
        seed=args.seed,
    )
    _write_csv(args.out, rows)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="miikit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tableau", help="inspect an integrator tableau")
    p.add_argument("action", choices=["check"])
    p.add_argument("name", help="catalog name or JSON file")
    p.add_argument("--json", action="store_true", help="emit the report as JSON")
    p.set_defaults(func=cmd_tableau)

    p = sub.add_parser("integrate", help="integrate a benchmark system")
    p.add_argument("--system", required=True)
    p.add_argument("--method", required=True)
    p.add_argument("--h", type=float, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--y0", required=True, help="comma-separated initial state")
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_integrate)

    p = sub.add_parser("generate", help="generate a trajectory dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--data", default=None, help="pre-generated dataset (.npz)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="flow error of a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--system", required=True)
    p.add_argument("--method", default="checkpoint")
    p.add_argument("--h", type=float, default=0.1)
    p.add_argument("--n1", type=int, default=16)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--points", type=int, default=10)
    p.add_argument("--r-min", type=float, default=0.3)
    p.add_argument("--r-max", type=float, default=0.6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="run a training benchmark grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="results CSV path")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("sensitivity", help="noise sensitivity scan")
    p.add_argument("--system", required=True)
    p.add_argument("--T", type=float, default=2.4)
    p.add_argument("--sigma2", type=float, default=2.5e-3)
    p.add_argument("--samples", type=int, default=5000)
    p.add_argument("--h-list", default="0.3,0.15,0.075")
    p.add_argument("--trajectories", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sensitivity)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
