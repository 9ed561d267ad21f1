"""Command-line front end: solve, validate, sample.

Configs are JSON with nested sections (problem / discretization / solver /
output); every field a flag can override is also round-trippable, and the
config actually used is echoed into the artifact directory.  Exit codes:
0 success (and converged, for solve), 1 configuration problem, 2 solve ran
but did not converge.

All numerics are single-threaded and deterministic; --threads (or
MFGLAT_THREADS) is accepted, recorded in the report, and does not change
any numbers.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import RNG_ALGORITHM, sample_states
from .errors import ConfigurationError, CoverageError, StructuralError, UsageError
from .examples import build_problem
from .fixedpoint import l1_flow_distance, tolerance_schedule_run
from .hjb import ValuePolicy, backward_sweep, saturation_report
from .lattice import LevelSets, NodeTable, build_level_sets
from .problem import Discretization, validate
from .transport import TransitionKernel, forward_push


@dataclass
class RunConfig:
    problem: dict
    n_t: int
    n_s: int
    epsilon: float
    control_bound: float = 4.0
    interp_radius: int = 1
    deltas: tuple = (0.1, 0.01, 0.001)
    max_iters: int = 500
    picard: bool = False
    out_dir: str = "runs/out"
    dump_values: bool = False
    dump_kernels: bool = False
    dump_level_sets: bool = False
    seed: int = 0
    threads: int = 1

    def to_dict(self) -> dict:
        return {
            "problem": dict(self.problem),
            "discretization": {
                "n_t": self.n_t, "n_s": self.n_s, "epsilon": self.epsilon,
                "control_bound": self.control_bound,
                "interp_radius": self.interp_radius,
            },
            "solver": {
                "deltas": list(self.deltas), "max_iters": self.max_iters,
                "picard": self.picard,
            },
            "output": {
                "dir": self.out_dir, "dump_values": self.dump_values,
                "dump_kernels": self.dump_kernels,
                "dump_level_sets": self.dump_level_sets,
            },
            "seed": self.seed,
            "threads": self.threads,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        def section(name, required=()):
            sec = data.get(name)
            if sec is None:
                if required:
                    raise ConfigurationError(f"config is missing the {name} section")
                return {}
            if not isinstance(sec, dict):
                raise ConfigurationError(f"config section {name} must be a mapping")
            return dict(sec)

        known_top = {"problem", "discretization", "solver", "output", "seed", "threads"}
        unknown = set(data) - known_top
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")

        problem = section("problem", required=True)
        disc = section("discretization", required=True)
        solver = section("solver")
        output = section("output")
        try:
            cfg = cls(
                problem=problem,
                n_t=int(disc.pop("n_t")),
                n_s=int(disc.pop("n_s")),
                epsilon=float(disc.pop("epsilon")),
                control_bound=float(disc.pop("control_bound", 4.0)),
                interp_radius=int(disc.pop("interp_radius", 1)),
                deltas=tuple(float(d) for d in solver.pop("deltas", (0.1, 0.01, 0.001))),
                max_iters=int(solver.pop("max_iters", 500)),
                picard=bool(solver.pop("picard", False)),
                out_dir=str(output.pop("dir", "runs/out")),
                dump_values=bool(output.pop("dump_values", False)),
                dump_kernels=bool(output.pop("dump_kernels", False)),
                dump_level_sets=bool(output.pop("dump_level_sets", False)),
                seed=int(data.get("seed", 0)),
                threads=int(data.get("threads", 1)),
            )
        except KeyError as exc:
            raise ConfigurationError(f"config is missing {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad config value: {exc}") from None
        for name, sec in (("discretization", disc), ("solver", solver),
                          ("output", output)):
            if sec:
                raise ConfigurationError(
                    f"unknown keys in {name} section: {sorted(sec)}")
        return cfg

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigurationError("config root must be a JSON object")
        return cls.from_dict(data)


def _r(x) -> str:
    return repr(float(x))


def write_flow_csv(path, level_sets: LevelSets, flow, disc: Discretization):
    d = level_sets.tables[0].idx.shape[1]
    header = "k,t," + ",".join(f"x{a + 1}" for a in range(d)) + ",mass"
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for k, weights in enumerate(flow.marginals):
            t = _r(k * disc.dt)
            coords = level_sets.coords(k)
            for row, w in zip(coords, weights):
                cs = ",".join(_r(c) for c in row)
                fh.write(f"{k},{t},{cs},{_r(w)}\n")


def write_error_trace_csv(path, fp_report):
    with open(path, "w") as fh:
        fh.write("stage,delta,n,error\n")
        i = 0
        for s_idx, stage in enumerate(fp_report.stages):
            for n in range(stage.iterations):
                fh.write(f"{s_idx},{_r(stage.delta)},{n + 1},"
                         f"{_r(fp_report.error_trace[i])}\n")
                i += 1


def write_values_csv(path, level_sets: LevelSets, values):
    d = level_sets.tables[0].idx.shape[1]
    header = "k," + ",".join(f"x{a + 1}" for a in range(d)) + ",value"
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for k, vals in enumerate(values):
            coords = level_sets.coords(k)
            for row, v in zip(coords, vals):
                cs = ",".join(_r(c) for c in row)
                fh.write(f"{k},{cs},{_r(v)}\n")


def write_level_sets_csv(path, level_sets: LevelSets):
    d = level_sets.tables[0].idx.shape[1]
    header = "k," + ",".join(f"i{a + 1}" for a in range(d)) \
        + "," + ",".join(f"x{a + 1}" for a in range(d))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for k in range(len(level_sets)):
            tab = level_sets.tables[k]
            for row in tab.idx:
                ints = ",".join(str(int(i)) for i in row)
                cs = ",".join(_r(i * level_sets.dx) for i in row)
                fh.write(f"{k},{ints},{cs}\n")


def write_kernel_csv(path, kernel: TransitionKernel, max_entries: int = 2_000_000):
    ls = kernel.policy.level_sets
    d = ls.tables[0].idx.shape[1]
    total = 0
    with open(path, "w") as fh:
        src = ",".join(f"src_i{a + 1}" for a in range(d))
        dst = ",".join(f"dst_i{a + 1}" for a in range(d))
        fh.write(f"k,{src},{dst},prob\n")
        for k in range(kernel.n_steps):
            mat = kernel.materialize(k, max_entries=max_entries).tocoo()
            total += mat.nnz
            if total > max_entries:
                raise UsageError("kernel dump exceeds the entry cap")
            order = np.lexsort((mat.col, mat.row))
            src_idx = ls.tables[k].idx
            dst_idx = ls.tables[k + 1].idx
            for e in order:
                si = ",".join(str(int(i)) for i in src_idx[mat.row[e]])
                di = ",".join(str(int(i)) for i in dst_idx[mat.col[e]])
                fh.write(f"{k},{si},{di},{_r(mat.data[e])}\n")


def write_paths_csv(path, times, states):
    d = states.shape[2] if states.ndim == 3 else 1
    header = "path,k,t," + ",".join(f"x{a + 1}" for a in range(d))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for p in range(states.shape[0]):
            for k in range(states.shape[1]):
                cs = ",".join(_r(c) for c in states[p, k])
                fh.write(f"{p},{k},{_r(times[k])},{cs}\n")


def save_solution(path, level_sets: LevelSets, flow, values):
    payload = {"n_t": np.asarray(len(level_sets) - 1),
               "dim_r": np.asarray(level_sets.dim_r)}
    for k in range(len(level_sets)):
        payload[f"idx_{k}"] = level_sets.tables[k].idx
        payload[f"m_{k}"] = flow.marginals[k]
        payload[f"val_{k}"] = values[k]
    np.savez(path, **payload)


def load_solution(path, problem, disc: Discretization):
    data = np.load(path)
    n_t = int(data["n_t"])
    if n_t != disc.n_t:
        raise ConfigurationError("solution artifact does not match the config's n_t")
    tables = [NodeTable(data[f"idx_{k}"]) for k in range(n_t + 1)]
    ls = LevelSets(tables, disc.dx, int(data["dim_r"]))
    marginals = [np.asarray(data[f"m_{k}"], dtype=float) for k in range(n_t + 1)]
    values = [np.asarray(data[f"val_{k}"], dtype=float) for k in range(n_t + 1)]
    vp = ValuePolicy(problem, disc, ls, marginals, values, np.zeros(n_t))
    return ls, vp


def _resolve_threads(cfg: RunConfig, args) -> int:
    if os.environ.get("MFGLAT_THREADS"):
        try:
            return int(os.environ["MFGLAT_THREADS"])
        except ValueError:
            raise ConfigurationError("MFGLAT_THREADS must be an integer") from None
    if getattr(args, "threads", None) is not None:
        return args.threads
    return cfg.threads


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    if getattr(args, "deltas", None):
        try:
            cfg.deltas = tuple(float(d) for d in args.deltas.split(","))
        except ValueError:
            raise ConfigurationError(f"bad --deltas value {args.deltas!r}") from None
    if getattr(args, "max_iters", None) is not None:
        cfg.max_iters = args.max_iters
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "dump_values", False):
        cfg.dump_values = True
    if getattr(args, "dump_kernels", False):
        cfg.dump_kernels = True
    if getattr(args, "dump_levelsets", False):
        cfg.dump_level_sets = True
    cfg.threads = _resolve_threads(cfg, args)
    return cfg


def _build(cfg: RunConfig):
    problem = build_problem(cfg.problem)
    disc = Discretization(n_t=cfg.n_t, n_s=cfg.n_s, horizon=problem.horizon,
                          epsilon=cfg.epsilon, control_bound=cfg.control_bound,
                          interp_radius=cfg.interp_radius)
    return problem, disc


def cmd_validate(args) -> int:
    cfg = _load_config(args)
    problem, disc = _build(cfg)
    report = validate(problem, disc)
    print(report.summary())
    print(f"forecast |S_{disc.n_t}| ~ {report.set_size_forecast[-1]} nodes")
    return 0 if report.ok else 1


def cmd_solve(args) -> int:
    cfg = _load_config(args)
    problem, disc = _build(cfg)
    report = validate(problem, disc)
    print(report.summary())
    if not report.ok:
        return 1

    t0 = time.monotonic()
    level_sets = build_level_sets(problem, disc)
    fp = tolerance_schedule_run(problem, disc, level_sets, deltas=cfg.deltas,
                                max_iters=cfg.max_iters, picard=cfg.picard)
    vp, kernel = backward_sweep(fp.final_flow, level_sets, problem, disc)
    br = forward_push(fp.final_flow.marginals[0], kernel)
    expl = l1_flow_distance(br, fp.final_flow)
    runtime = time.monotonic() - t0

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    write_flow_csv(out / "flow.csv", level_sets, fp.final_flow, disc)
    write_error_trace_csv(out / "error_trace.csv", fp)
    save_solution(out / "solution.npz", level_sets, fp.final_flow, vp.values)
    if cfg.dump_values:
        write_values_csv(out / "values.csv", level_sets, vp.values)
    if cfg.dump_level_sets:
        write_level_sets_csv(out / "levelsets.csv", level_sets)
    if cfg.dump_kernels:
        write_kernel_csv(out / "kernel.csv", kernel)

    sat = saturation_report(vp)
    run_report = {
        "label": problem.label,
        "problem": cfg.problem,
        "discretization": {
            "n_t": disc.n_t, "n_s": disc.n_s, "dt": disc.dt, "dx": disc.dx,
            "epsilon": disc.epsilon, "control_bound": disc.control_bound,
            "c_k_estimate": report.c_k_estimate,
        },
        "stages": [{"delta": s.delta, "iterations": s.iterations,
                    "final_error": s.final_error} for s in fp.stages],
        "converged": fp.converged,
        "br_calls": fp.br_calls,
        "exploitability": expl,
        "saturation": {"max_share": max(fp.saturation_max, sat.max_share),
                       "threshold": sat.threshold},
        "level_sets": {"sizes": level_sets.sizes(),
                       "bounding_radius": level_sets.bounding_radius},
        "runtime_seconds": runtime,
        "threads_requested": cfg.threads,
        "numeric_threads": 1,
        "rng": RNG_ALGORITHM,
        "seed": cfg.seed,
    }
    (out / "report.json").write_text(
        json.dumps(run_report, indent=2, sort_keys=True) + "\n")

    for s in fp.stages:
        print(f"stage delta={s.delta:g}: {s.iterations} iterations, "
              f"final error {s.final_error:.3e}")
    print(f"converged: {fp.converged}; exploitability {expl:.3e}; "
          f"wall time {runtime:.1f}s")
    if run_report["saturation"]["max_share"] >= 0.01:
        print(f"warning: control saturation share "
              f"{run_report['saturation']['max_share']:.3f} >= 0.01 — "
              "consider raising control_bound")
    return 0 if fp.converged else 2


def cmd_sample(args) -> int:
    cfg = _load_config(args)
    problem, disc = _build(cfg)
    artifact = Path(cfg.out_dir) / "solution.npz"
    if not artifact.exists():
        print(f"no solve artifact at {artifact}; run solve first", file=sys.stderr)
        return 1
    ls, vp = load_solution(artifact, problem, disc)
    kernel = TransitionKernel(vp)
    times, states, _ = sample_states(kernel, vp.marginals[0], args.count, cfg.seed)
    dest = Path(args.paths_out) if args.paths_out else Path(cfg.out_dir) / "paths.csv"
    write_paths_csv(dest, times, states)
    print(f"wrote {states.shape[0]} paths ({RNG_ALGORITHM}, seed {cfg.seed}) to {dest}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mfglat",
        description="lattice solver for deterministic mean field games")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_solve_flags=False):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="override the artifact directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker hint; recorded, never changes results")
        p.add_argument("--seed", type=int, default=None)
        if with_solve_flags:
            p.add_argument("--deltas", help="comma-separated tolerance schedule")
            p.add_argument("--max-iters", type=int, default=None)
            p.add_argument("--dump-values", action="store_true")
            p.add_argument("--dump-kernels", action="store_true")
            p.add_argument("--dump-levelsets", action="store_true")

    p_solve = sub.add_parser("solve", help="run the fixed-point solver")
    common(p_solve, with_solve_flags=True)
    p_solve.set_defaults(fn=cmd_solve)

    p_val = sub.add_parser("validate", help="check a configuration without solving")
    common(p_val)
    p_val.set_defaults(fn=cmd_validate)

    p_sample = sub.add_parser("sample", help="draw paths from a solve artifact")
    common(p_sample)
    p_sample.add_argument("--count", type=int, required=True)
    p_sample.add_argument("--paths-out", help="destination CSV (default: artifact dir)")
    p_sample.set_defaults(fn=cmd_sample)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigurationError, StructuralError, CoverageError, UsageError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
