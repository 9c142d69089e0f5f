"""Command-line front end: simulate, calibrate, evaluate, benchmark, polyfit.

Config files are flat ``key = value`` lines (``#`` starts a comment; values
are parsed as JSON when possible, so ``(0.5, 0.999)`` is written
``[0.5, 0.999]``). A ``.json`` file holding one flat object works too.

Exit codes: 0 ok, 2 usage, 3 input parse, 4 solver failure, 5 partial
benchmark failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import PairedDataset, solve_moment_matching, solve_with_correspondence
from .calibrator import GanConfig, calibrate
from .datagen import (PoseSet, SimConfig, StreamConfig, generate_dataset, generate_pairs,
                      generate_streams, load_pose, load_poseset, merge_pairs, save_pose,
                      save_poseset, simulate_time_offset)
from .errors import PoseParseError
from .genfit import fit, generate_poly_data, polyfit_config, polynomial_model
from .se3 import Pose, rotation_error, translation_error

log = logging.getLogger("ganhec")

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_SOLVER, EXIT_PARTIAL = 0, 2, 3, 4, 5
METHODS = ("gan", "moment", "oracle")
PAIRED_MARK = "# paired"


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class SolverError(Exception):
    pass


# ------------------------------------------------------------------ config

def parse_config_text(text: str) -> dict:
    stripped = text.strip()
    if stripped.startswith("{"):
        return json.loads(stripped)
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def load_config(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    try:
        return parse_config_text(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: {exc}") from None


def _split(cfg: dict, cls) -> tuple[dict, dict]:
    names = {f.name for f in fields(cls)}
    return {k: v for k, v in cfg.items() if k in names}, {k: v for k, v in cfg.items() if k not in names}


def _build(cls, values: dict):
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {cls.__name__} settings: {exc}") from None


def _gan_config(cfg: dict, seed: int | None) -> GanConfig:
    gan_keys, _ = _split(cfg, GanConfig)
    if seed is not None:
        gan_keys["seed"] = seed
    return _build(GanConfig, gan_keys)


# ---------------------------------------------------------------- manifest

def write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_manifest(out_dir: Path, command: str, config: dict, seed, inputs, outputs, wall_time) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "version": __version__,
        "wall_time": wall_time,
        "argv": sys.argv[1:],
    }
    write_atomic(out_dir / "manifest.json", json.dumps(manifest, indent=2, default=_jsonable))


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serializable: {type(o)}")


def _out_dir(path) -> Path:
    if path is None:
        raise UsageError("--out is required")
    out = Path(path)
    if not out.parent.exists():
        raise InputError(f"parent directory of output does not exist: {out.parent}")
    out.mkdir(exist_ok=True)
    return out


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    sim_keys, rest = _split(cfg, SimConfig)
    if args.seed is not None:
        sim_keys["seed"] = args.seed
    if args.noise is not None:
        sim_keys["noise_std"] = args.noise
    sim = _build(SimConfig, sim_keys)
    paired = bool(rest.get("paired", args.paired))
    out = _out_dir(args.out)
    t0 = time.perf_counter()

    rng = np.random.default_rng(sim.seed)
    a_set, b_set, x_true = generate_dataset(sim, rng)
    outputs = [out / "A.poses", out / "B.poses", out / "x_true.pose"]
    save_poseset(a_set, outputs[0])
    save_poseset(b_set, outputs[1])
    save_pose(x_true, outputs[2])

    # regenerate the pairs from the same seed and confirm A X = X B
    pairs = generate_pairs(sim, np.random.default_rng(sim.seed))
    lhs = pairs.a.matrices() @ x_true.matrix
    rhs = x_true.matrix @ pairs.b.matrices()
    residual = float(np.max(np.abs(lhs - rhs)) / max(sim.d, 1.0))
    if paired:
        pa, pb = out / "pairs_A.poses", out / "pairs_B.poses"
        _save_paired(pairs.a, pa)
        _save_paired(pairs.b, pb)
        outputs += [pa, pb]
    snapshot = asdict(sim) | {"paired": paired, "loop_closure_residual": residual}
    write_manifest(out, "simulate", snapshot, sim.seed, [], outputs, time.perf_counter() - t0)
    print(f"wrote {len(a_set)} A and {len(b_set)} B poses to {out} "
          f"(loop-closure residual {residual:.2e})")
    return EXIT_OK


def _save_paired(poses: PoseSet, path: Path) -> None:
    save_poseset(poses, path)
    text = path.read_text(encoding="utf-8")
    path.write_text(PAIRED_MARK + "\n" + text, encoding="utf-8")


def is_paired_file(path) -> bool:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                return False
            if line.strip() == PAIRED_MARK:
                return True
    return False


def _load_poses(path) -> PoseSet:
    try:
        return load_poseset(path)
    except PoseParseError as exc:
        raise InputError(f"{path}: {exc}") from None
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"{path}: {exc}") from None


def solve(method: str, a_set: PoseSet, b_set: PoseSet, gan_cfg: GanConfig) -> dict:
    """Run one solver; returns a JSON-ready dict with ``x_est`` and ``quality``."""
    t0 = time.perf_counter()
    if method == "gan":
        res = calibrate(a_set, b_set, gan_cfg)
        out = res.to_dict()
    elif method == "moment":
        x = solve_moment_matching(a_set, b_set)
        out = {"x_est": x.matrix.ravel().tolist(), "quality": None}
    elif method == "oracle":
        x = solve_with_correspondence(PairedDataset(a_set, b_set))
        out = {"x_est": x.matrix.ravel().tolist(), "quality": None}
    else:
        raise UsageError(f"unknown method {method!r}")
    out["method"] = method
    out["wall_time"] = time.perf_counter() - t0
    return out


def cmd_calibrate(args) -> int:
    if len(args.inputs) != 2:
        raise UsageError("calibrate takes two pose files: A B")
    a_path, b_path = args.inputs
    if args.out is None:
        raise UsageError("--out is required")
    method = args.method or "gan"
    if method == "oracle" and not (is_paired_file(a_path) and is_paired_file(b_path)):
        raise UsageError("--method oracle needs paired input files (written by simulate with paired = true)")
    cfg = load_config(args.config)
    gan_cfg = _gan_config(cfg, args.seed)
    a_set, b_set = _load_poses(a_path), _load_poses(b_path)
    if method == "oracle" and len(a_set) != len(b_set):
        raise UsageError(f"paired files differ in length: {len(a_set)} vs {len(b_set)}")
    try:
        result = solve(method, a_set, b_set, gan_cfg)
    except UsageError:
        raise
    except Exception as exc:
        raise SolverError(f"{type(exc).__name__}: {exc}") from exc
    result["config"] = gan_cfg.to_dict()
    # timings would break byte-identical reruns
    result.pop("wall_time", None)
    for r in result.get("restarts", []):
        r.pop("wall_time", None)
    out = Path(args.out)
    if not out.parent.exists():
        raise InputError(f"parent directory of output does not exist: {out.parent}")
    write_atomic(out, json.dumps(result, indent=2, default=_jsonable))
    print(f"{method}: Q = {result['quality']}, wrote {out}")
    return EXIT_OK


def load_result_pose(path) -> Pose:
    """``x_est`` from a calibrate result JSON, or a plain pose file."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
            m = np.asarray(data["x_est"], dtype=float).reshape(4, 4)
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise InputError(f"{path}: cannot read x_est ({exc})") from None
        try:
            return Pose.from_matrix(m)
        except ValueError as exc:
            raise InputError(f"{path}: {exc}") from None
    try:
        return load_pose(path)
    except (PoseParseError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from None


def evaluate(est: Pose, truth: Pose) -> dict:
    return {"rot_err_deg": float(np.degrees(rotation_error(est.r, truth.r))),
            "trans_err": float(translation_error(est, truth))}


def cmd_evaluate(args) -> int:
    if len(args.inputs) != 2:
        raise UsageError("evaluate takes two files: RESULT TRUTH")
    est = load_result_pose(args.inputs[0])
    truth = load_result_pose(args.inputs[1])
    report = evaluate(est, truth)
    print(f"rotation error    {report['rot_err_deg']:.6f} deg")
    print(f"translation error {report['trans_err']:.6g}")
    if args.out:
        write_atomic(Path(args.out), json.dumps(report, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------- benchmark

BENCH_DEFAULTS = {
    "trials": 20, "noise_levels": [0.0], "offset_fraction": 0.0,
    "methods": ["gan", "moment"], "n": 600, "m": 400, "d": 125.31,
}
CSV_FIELDS = ["trial", "method", "noise", "offset", "rot_err_deg", "trans_err", "q",
              "wall_time", "status"]


def trial_seed(master: int, trial: int) -> int:
    return int(np.random.SeedSequence([master, trial]).generate_state(1)[0])


def make_trial_data(trial: int, noise: float, offset: float, bench: dict, master_seed: int):
    """Unpaired sets for one trial (plus paired sets when available)."""
    seed = trial_seed(master_seed, trial)
    if offset > 0 or bench.get("streams", False):
        scfg = StreamConfig(d=bench["d"], seed=seed, **bench.get("stream", {}))
        rng = np.random.default_rng(seed)
        robot, cam, x_true = generate_streams(scfg, rng)
        robot_c, cam_c = simulate_time_offset(robot, cam, offset)
        a_set, b_set = merge_pairs(robot_c), merge_pairs(cam_c)
        if noise > 0:
            from .datagen import add_noise
            a_set = add_noise(a_set, noise, rng, bench["d"])
            b_set = add_noise(b_set, noise, rng, bench["d"])
        return a_set, b_set, x_true, None
    sim = SimConfig(d=bench["d"], n=bench["n"], m=bench["m"], noise_std=noise, seed=seed)
    a_set, b_set, x_true = generate_dataset(sim)
    pairs = generate_pairs(sim, np.random.default_rng(seed))
    return a_set, b_set, x_true, pairs


def run_trial(job) -> dict:
    trial, method, noise, offset, bench, gan_dict, master_seed = job
    row = {"trial": trial, "method": method, "noise": noise, "offset": offset,
           "rot_err_deg": "", "trans_err": "", "q": "", "wall_time": "", "status": "ok"}
    t0 = time.perf_counter()
    try:
        a_set, b_set, x_true, pairs = make_trial_data(trial, noise, offset, bench, master_seed)
        if method == "oracle":
            if pairs is None:
                raise UsageError("oracle needs paired data")
            a_set, b_set = pairs.a, pairs.b
        gan_cfg = GanConfig.from_dict(gan_dict | {"seed": trial_seed(master_seed, trial)})
        res = solve(method, a_set, b_set, gan_cfg)
        est = Pose.from_matrix(np.asarray(res["x_est"]).reshape(4, 4))
        err = evaluate(est, x_true)
        row.update(rot_err_deg=err["rot_err_deg"], trans_err=err["trans_err"],
                   q="" if res["quality"] is None else res["quality"])
    except Exception as exc:  # recorded, the sweep goes on
        row["status"] = f"failed: {type(exc).__name__}: {exc}".replace("\n", " ")
    row["wall_time"] = time.perf_counter() - t0
    return row


def summarize(rows: list[dict]) -> list[dict]:
    """Mean and (population) std of the error columns per (method, noise, offset)."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        if r["status"] == "ok":
            groups.setdefault((r["method"], r["noise"], r["offset"]), []).append(r)
    out = []
    for (method, noise, offset), rs in groups.items():
        for stat, fn in (("mean", np.mean), ("std", np.std)):
            row = {"trial": stat, "method": method, "noise": noise, "offset": offset,
                   "status": f"n={len(rs)}"}
            for col in ("rot_err_deg", "trans_err", "wall_time"):
                row[col] = float(fn([float(r[col]) for r in rs]))
            qs = [float(r["q"]) for r in rs if r["q"] != ""]
            row["q"] = float(fn(qs)) if qs else ""
            out.append(row)
    return out


def _format_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def _pool_map(fn, jobs, threads: int):
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))


def cmd_benchmark(args) -> int:
    cfg = load_config(args.config)
    bench = dict(BENCH_DEFAULTS)
    bench.update({k: v for k, v in cfg.items() if k in BENCH_DEFAULTS or k in ("streams", "stream")})
    if args.method:
        bench["methods"] = [args.method]
    for m in bench["methods"]:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}")
    gan_cfg = _gan_config(cfg, None)
    master = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    out = _out_dir(args.out)
    t0 = time.perf_counter()
    jobs = [(t, method, float(noise), float(bench["offset_fraction"]), bench,
             gan_cfg.to_dict(), master)
            for noise in bench["noise_levels"] for t in range(int(bench["trials"]))
            for method in bench["methods"]]
    rows = _pool_map(run_trial, jobs, args.threads or os.cpu_count() or 1)
    summary = summarize(rows)
    csv_path = out / "benchmark.csv"
    write_atomic(csv_path, _format_csv(rows + summary))
    write_manifest(out, "benchmark", bench | {"gan": gan_cfg.to_dict()}, master, [], [csv_path],
                   time.perf_counter() - t0)
    for s in summary:
        print(f"{s['method']:>7} noise={s['noise']:<6g} offset={s['offset']:<5g} {s['trial']:>4}: "
              f"rot {s['rot_err_deg']:.4f} deg, trans {s['trans_err']:.4g}")
    failed = [r for r in rows if r["status"] != "ok"]
    if failed:
        print(f"{len(failed)} of {len(rows)} trials failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


# ---------------------------------------------------------------- polyfit

POLY_DEFAULTS = {"runs": 100, "n_a": 400, "n_b": 600, "x_true": [3.0, -2.0, 1.0],
                 "a_lo": -4.0, "a_hi": 3.0}


def run_poly(job) -> dict:
    run, poly, gan_dict, master = job
    seed = trial_seed(master, run)
    row = {"run": run, "c0": "", "c1": "", "c2": "", "q": "", "status": "ok"}
    try:
        rng = np.random.default_rng(seed)
        a, b = generate_poly_data(poly["n_a"], poly["n_b"], poly["x_true"], poly["a_lo"],
                                  poly["a_hi"], rng)
        x, q = fit(polynomial_model(), a, b, GanConfig.from_dict(gan_dict | {"seed": seed}))
        row.update(c0=float(x[0]), c1=float(x[1]), c2=float(x[2]), q=q)
    except Exception as exc:
        row["status"] = f"failed: {type(exc).__name__}: {exc}".replace("\n", " ")
    return row


def cmd_polyfit(args) -> int:
    cfg = load_config(args.config)
    poly = dict(POLY_DEFAULTS)
    poly.update({k: v for k, v in cfg.items() if k in POLY_DEFAULTS})
    gan_keys, _ = _split(cfg, GanConfig)
    gan_cfg = _build(GanConfig, polyfit_config().to_dict() | gan_keys)
    master = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    out = _out_dir(args.out)
    t0 = time.perf_counter()
    jobs = [(i, poly, gan_cfg.to_dict(), master) for i in range(int(poly["runs"]))]
    rows = _pool_map(run_poly, jobs, args.threads or os.cpu_count() or 1)

    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["run", "c0", "c1", "c2", "q", "status"],
                            lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    coef_path = out / "coefficients.csv"
    write_atomic(coef_path, buf.getvalue())
    ok = [r for r in rows if r["status"] == "ok"]
    coefs = np.array([[r["c0"], r["c1"], r["c2"]] for r in ok], dtype=float).reshape(-1, 3)
    summary = {
        "runs": len(rows), "ok": len(ok), "x_true": poly["x_true"],
        "mean": coefs.mean(axis=0).tolist() if len(ok) else None,
        "std": coefs.std(axis=0).tolist() if len(ok) else None,
    }
    summary_path = out / "summary.json"
    write_atomic(summary_path, json.dumps(summary, indent=2))
    write_manifest(out, "polyfit", poly | {"gan": gan_cfg.to_dict()}, master, [],
                   [coef_path, summary_path], time.perf_counter() - t0)
    print(f"{len(ok)}/{len(rows)} runs ok; mean coefficients {summary['mean']}")
    return EXIT_OK if len(ok) == len(rows) else EXIT_PARTIAL


# ---------------------------------------------------------------- entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ganhec", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--config", default=None, help="flat key = value config file")
    common.add_argument("--out", default=None, help="output file or directory")
    common.add_argument("--threads", type=int, default=None, help="worker processes (benchmark, polyfit)")
    common.add_argument("--method", choices=METHODS, default=None)
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic A/B dataset")
    p.add_argument("--noise", type=float, default=None, help="noise standard deviation")
    p.add_argument("--paired", action="store_true", help="also write paired sets for the oracle")
    p.set_defaults(func=cmd_simulate, inputs=[])

    p = sub.add_parser("calibrate", parents=[common], help="estimate X from two pose files")
    p.add_argument("inputs", nargs="*", metavar="FILE")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", parents=[common], help="compare a result with the truth")
    p.add_argument("inputs", nargs="*", metavar="FILE")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", parents=[common], help="seeded sweep, CSV output")
    p.set_defaults(func=cmd_benchmark, inputs=[])

    p = sub.add_parser("polyfit", parents=[common], help="polynomial fitting runs")
    p.set_defaults(func=cmd_polyfit, inputs=[])
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except SolverError as exc:
        print(json.dumps({"error": "solver_failure", "reason": str(exc)}), file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
