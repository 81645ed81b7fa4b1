"""Dataset generation and benchmark orchestration.

Seeding scheme: every random choice descends from one root integer through
``numpy.random.SeedSequence`` with a fixed spawn layout.  For dataset
generation, child 0 draws the initial values and child 1+i the noise of the
i-th (h, N1) pair.  For benchmark grids, each cell derives its own sequence
from the entropy tuple (root, system index, pair index, sigma index,
repeat), so results are bit-reproducible regardless of execution order.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .integrators import Trajectory, reference_solve, reference_solve_field
from .model import ScalarFieldModel, numpy_field
from .systems import get_system
from .training import TrainConfig, flow_error, train

CSV_FIELDS = (
    "system",
    "method",
    "h",
    "N1",
    "sigma",
    "seed",
    "flow_error",
    "train_seconds",
    "status",
)

#: benchmark method key -> (TrainConfig method, needs separable system)
BENCHMARK_METHODS = {
    "midpoint-os": ("onestep:midpoint", False),
    "rk4-os": ("onestep:rk4", False),
    "mirk4-os": ("onestep:mirk4", False),
    "mii-mirk4": ("mii:mirk4", False),
    "iso-stormer": ("iso:stormer_verlet", True),
    "iso-rk4": ("iso:rk4", False),
}


@dataclass(frozen=True)
class DataSpec:
    system: str
    n_trajectories: int
    r_min: float = 0.3
    r_max: float = 0.6
    pairs: Sequence[tuple] = ((0.4, 4), (0.2, 8), (0.1, 16))
    sigma: float = 0.0
    seed: int = 0
    system_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.r_min < self.r_max:
            raise ValueError("need 0 < r_min < r_max")
        if self.n_trajectories < 1:
            raise ValueError("need at least one trajectory")
        if self.sigma < 0:
            raise ValueError("noise level must be non-negative")
        if any(n < 1 for _, n in self.pairs):
            raise ValueError("need at least one step per trajectory")


@dataclass
class DataSet:
    """Noisy trajectory bundle for one (h, N1) pair."""

    system: str
    h: float
    n_steps: int
    sigma: float
    seed: int
    Y: np.ndarray  # (n_traj, N1+1, dim), noisy
    Y_exact: np.ndarray
    y0: np.ndarray

    def save(self, path) -> None:
        np.savez(
            path,
            Y=self.Y,
            Y_exact=self.Y_exact,
            y0=self.y0,
            meta=json.dumps(
                {
                    "system": self.system,
                    "h": self.h,
                    "n_steps": self.n_steps,
                    "sigma": self.sigma,
                    "seed": self.seed,
                }
            ),
        )

    @classmethod
    def load(cls, path) -> "DataSet":
        with np.load(path, allow_pickle=False) as blob:
            meta = json.loads(str(blob["meta"]))
            return cls(Y=blob["Y"], Y_exact=blob["Y_exact"], y0=blob["y0"], **meta)


def sample_initial_values(
    n: int, dim: int, r_min: float, r_max: float, rng: np.random.Generator
) -> np.ndarray:
    """Uniform draws from the spherical shell r_min <= |y| <= r_max.

    Rejection from the uniform ball of radius r_max; the acceptance rate is
    1 - (r_min/r_max)^dim, so the attempt cap is purely defensive.
    """
    out = np.empty((n, dim))
    got = 0
    attempts = 0
    while got < n:
        attempts += 1
        if attempts > 1_000_000:
            raise RuntimeError("shell rejection sampling exceeded the attempt budget")
        g = rng.normal(size=dim)
        y = (r_max * rng.uniform() ** (1.0 / dim)) * g / np.linalg.norm(g)
        if np.linalg.norm(y) >= r_min:
            out[got] = y
            got += 1
    return out


def generate_dataset(spec: DataSpec) -> list[DataSet]:
    """One DataSet per (h, N1) pair; initial values are shared across pairs."""
    sys = get_system(spec.system, **spec.system_params)
    root = np.random.SeedSequence(spec.seed)
    children = root.spawn(1 + len(spec.pairs))
    y0 = sample_initial_values(
        spec.n_trajectories, sys.dim, spec.r_min, spec.r_max,
        np.random.default_rng(children[0]),
    )
    out = []
    for i, (h, n_steps) in enumerate(spec.pairs):
        exact = np.stack(
            [reference_solve(sys, y, h, n_steps).points for y in y0]
        )
        noise_rng = np.random.default_rng(children[1 + i])
        noisy = exact + noise_rng.normal(scale=spec.sigma, size=exact.shape)
        out.append(
            DataSet(
                system=spec.system,
                h=float(h),
                n_steps=int(n_steps),
                sigma=spec.sigma,
                seed=spec.seed,
                Y=noisy,
                Y_exact=exact,
                y0=y0,
            )
        )
    return out


# ---------------------------------------------------------------------------
# benchmark grid


def desk_scale_grid(systems=("henon_heiles", "double_pendulum")) -> dict:
    """Grid defaults sized to run on one workstation core set."""
    return {
        "systems": list(systems),
        "methods": ["midpoint-os", "rk4-os", "mirk4-os", "mii-mirk4"],
        "pairs": [[0.4, 4], [0.1, 16]],
        "sigmas": [0.0, 0.05],
        "repeats": 5,
        "n_trajectories": 30,
        "hidden": [32, 32],
        "epochs": 4,
        "pretrain_epochs": 2,
        "test_points": 10,
        "r_min": 0.3,
        "r_max": 0.6,
        "seed": 0,
    }


def _cell_rows(grid: dict, si: int, pi: int, gi: int, repeat: int) -> list[dict]:
    """Train every requested method on one grid cell's shared dataset."""
    system_name = grid["systems"][si]
    h, n1 = grid["pairs"][pi]
    sigma = grid["sigmas"][gi]
    root = np.random.SeedSequence((grid["seed"], si, pi, gi, repeat))
    data_seed, model_seed, test_seed = [
        int(s.generate_state(1)[0]) for s in root.spawn(3)
    ]
    sys = get_system(system_name)
    spec = DataSpec(
        system=system_name,
        n_trajectories=grid["n_trajectories"],
        r_min=grid["r_min"],
        r_max=grid["r_max"],
        pairs=((h, n1),),
        sigma=sigma,
        seed=data_seed,
    )
    dataset = generate_dataset(spec)[0]
    test_points = sample_initial_values(
        grid["test_points"], sys.dim, grid["r_min"], grid["r_max"],
        np.random.default_rng(test_seed),
    )
    rows = []
    for method in grid["methods"]:
        base = {
            "system": system_name,
            "method": method,
            "h": h,
            "N1": n1,
            "sigma": sigma,
            "seed": repeat,
        }
        train_method, needs_separable = BENCHMARK_METHODS[method]
        if needs_separable and not sys.separable:
            rows.append(
                {**base, "flow_error": "", "train_seconds": "",
                 "status": "error: requires separability"}
            )
            continue
        try:
            cfg = TrainConfig(
                method=train_method,
                epochs=grid["epochs"],
                pretrain_epochs=grid["pretrain_epochs"],
                hidden=tuple(grid["hidden"]),
                variant="separable" if sys.separable else "dense",
                seed=model_seed,
            )
            start = time.perf_counter()
            result = train(cfg, dataset)
            seconds = time.perf_counter() - start
            report = flow_error(result.model, sys, test_points, h)
            rows.append(
                {**base, "flow_error": report.e, "train_seconds": round(seconds, 3),
                 "status": "ok"}
            )
        except Exception as exc:  # grid must survive individual failures
            rows.append(
                {**base, "flow_error": "", "train_seconds": "",
                 "status": f"error: {exc}"}
            )
    return rows


def _cell_worker(args):
    import torch

    torch.set_num_threads(1)
    return _cell_rows(*args)


def _append_rows(csv_path, rows: list[dict]) -> None:
    path = Path(csv_path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        if new:
            writer.writeheader()
        for row in rows:
            writer.writerow(row)
        fh.flush()
        os.fsync(fh.fileno())


def run_benchmark(grid: dict, csv_path, workers: Optional[int] = None) -> list[dict]:
    """Run the full grid, appending one CSV row per (cell, method).

    ``workers`` defaults to the MII_THREADS environment variable (1 if
    unset).  Cells are independent; rows are written by this process only.
    """
    if workers is None:
        workers = int(os.environ.get("MII_THREADS", "1"))
    cells = [
        (grid, si, pi, gi, repeat)
        for si in range(len(grid["systems"]))
        for pi in range(len(grid["pairs"]))
        for gi in range(len(grid["sigmas"]))
        for repeat in range(grid["repeats"])
    ]
    all_rows: list[dict] = []
    if workers <= 1:
        for cell in cells:
            rows = _cell_rows(*cell)
            _append_rows(csv_path, rows)
            all_rows.extend(rows)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_cell_worker, cell) for cell in cells]
            for fut in as_completed(futures):
                rows = fut.result()
                _append_rows(csv_path, rows)
                all_rows.extend(rows)
    _write_plot_script(csv_path)
    return all_rows


def _write_plot_script(csv_path) -> None:
    """Companion script so the CSV can be plotted without this package."""
    path = Path(csv_path)
    script = path.with_suffix(path.suffix + ".plot.py")
    script.write_text(
        '"""Plot flow errors from the benchmark CSV next to this script."""\n'
        "import csv\n"
        "import collections\n"
        "import statistics\n"
        "import matplotlib.pyplot as plt\n\n"
        f"rows = list(csv.DictReader(open({path.name!r})))\n"
        "rows = [r for r in rows if r['status'] == 'ok']\n"
        "cells = collections.defaultdict(list)\n"
        "for r in rows:\n"
        "    cells[(r['system'], r['h'], r['method'])].append(float(r['flow_error']))\n"
        "systems = sorted({s for s, _, _ in cells})\n"
        "fig, axes = plt.subplots(1, len(systems), figsize=(5 * len(systems), 4))\n"
        "for ax, system in zip(getattr(axes, 'flat', [axes]), systems):\n"
        "    hs = sorted({h for s, h, _ in cells if s == system})\n"
        "    methods = sorted({m for s, _, m in cells if s == system})\n"
        "    for m in methods:\n"
        "        ys = [statistics.median(cells[(system, h, m)]) for h in hs]\n"
        "        ax.plot([float(h) for h in hs], ys, marker='o', label=m)\n"
        "    ax.set(xlabel='h', ylabel='flow error', title=system, yscale='log')\n"
        "    ax.legend()\n"
        "fig.tight_layout()\n"
        "fig.savefig('flow_error.png', dpi=150)\n"
    )


# ---------------------------------------------------------------------------
# roll-outs of learned fields


def rollout(model: ScalarFieldModel, y0: np.ndarray, h: float, steps: int) -> Trajectory:
    """Integrate the learned field with the reference solver."""
    f, jac = numpy_field(model)
    return reference_solve_field(f, y0, h, steps, jac=jac, exact=False)


def rollout_rows(model, sys, y0, h, steps) -> list[dict]:
    """Side-by-side roll-out of the learned and the true field."""
    learned = rollout(model, y0, h, steps)
    truth = reference_solve(sys, y0, h, steps)
    rows = []
    for k, t in enumerate(learned.times()):
        row = {"t": float(t)}
        row.update({f"y{i+1}": truth.points[k, i] for i in range(truth.dim)})
        row.update({f"yhat{i+1}": learned.points[k, i] for i in range(learned.dim)})
        row["H_true"] = float(sys.hamiltonian(truth.points[k]))
        rows.append(row)
    return rows
