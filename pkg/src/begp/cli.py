"""Command-line entry point.

Subcommands::

    begp bench-regression --config run.yaml --out results/
    begp bench-bo         --config run.yaml --out results/
    begp fit      --data data.csv [--config run.yaml] --model-out model.json
    begp predict  --model model.json --query query.csv [--out preds.csv]
    begp suggest  --model model.json --task T (--candidates c.csv | --lower .. --upper ..)
    begp observe  --model model.json --task T --x 0.1,0.2 --y 1.5

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .acquisition import ContinuousDesignSpace, FiniteDesignSet, expected_improvement, maximize_ei, prob_best
from .begp import BAYESIAN, DETERMINISTIC, FORMAT_VERSION, BegpModel, MultiTaskData, TrainConfig
from .bench.experiments import ExperimentConfig, run_bo_experiment, run_regression_experiment
from .bench.synthetic import FORRESTER, TOY
from .bo_loop import LoopConfig

logger = logging.getLogger("begp")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

# every accepted key with its default; ``None`` seeds are drawn from entropy
DEFAULTS = {
    "model": {"d_z": 2, "latent_samples": 64, "mode": BAYESIAN, "init_variance": 0.01},
    "train": {
        "iterations": 2000,
        "step_size": 0.01,
        "warm_start_iterations": 500,
        "elbo_samples_per_step": 1,
        "seed": None,
    },
    "acquisition": {
        "kind": "auto",
        "restarts": 10,
        "n_samples": 500,
        "ei_steps": 100,
        "ei_step_scale": 0.05,
    },
    "experiment": {
        "family": TOY,
        "dataset": None,
        "seeds": None,
        "n_seeds": 10,
        "shot_grid": list(range(11)),
        "bo_budget": 5,
        "n_legacy_tasks": 5,
        "points_per_task": 5,
        "current_task_points": 15,
        "methods": ["begp", "egp", "gp"],
        "baseline_restarts": 5,
    },
}


class UsageError(Exception):
    """Bad arguments, configuration or input files (exit code 2)."""


# -- configuration ---------------------------------------------------------------


def load_config(path) -> dict:
    """Merge a YAML (or JSON) document over the defaults.

    A results manifest is accepted too; its ``config`` echo is used, which
    makes any recorded run repeatable from its manifest alone.
    """
    cfg = copy.deepcopy(DEFAULTS)
    if path is None:
        return cfg
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if doc is None:
        return cfg
    if not isinstance(doc, dict):
        raise UsageError("config must be a mapping of sections")
    if "config" in doc and "format_version" in doc:
        doc = doc["config"]
    for section, values in doc.items():
        if section not in cfg:
            raise UsageError(f"unknown config section {section!r}")
        if values is None:
            continue
        if not isinstance(values, dict):
            raise UsageError(f"section {section!r} must be a mapping")
        for key, value in values.items():
            if key not in cfg[section]:
                raise UsageError(f"unknown key {section}.{key}")
            cfg[section][key] = value
    _validate(cfg)
    return cfg


def _validate(cfg):
    m, t, a, e = cfg["model"], cfg["train"], cfg["acquisition"], cfg["experiment"]
    checks = [
        (isinstance(m["d_z"], int) and m["d_z"] >= 0, "model.d_z must be a non-negative integer"),
        (isinstance(m["latent_samples"], int) and m["latent_samples"] >= 1, "model.latent_samples must be >= 1"),
        (m["mode"] in (BAYESIAN, DETERMINISTIC), "model.mode must be bayesian or deterministic"),
        (_positive(m["init_variance"]), "model.init_variance must be positive"),
        (isinstance(t["iterations"], int) and t["iterations"] >= 0, "train.iterations must be >= 0"),
        (_positive(t["step_size"]), "train.step_size must be positive"),
        (isinstance(t["warm_start_iterations"], int) and t["warm_start_iterations"] >= 0,
         "train.warm_start_iterations must be >= 0"),
        (isinstance(t["elbo_samples_per_step"], int) and t["elbo_samples_per_step"] >= 1,
         "train.elbo_samples_per_step must be >= 1"),
        (t["seed"] is None or _seed_ok(t["seed"]), "train.seed must be a non-negative integer"),
        (a["kind"] in ("auto", "ei", "prob_best"), "acquisition.kind must be auto, ei or prob_best"),
        (isinstance(a["restarts"], int) and a["restarts"] >= 1, "acquisition.restarts must be >= 1"),
        (isinstance(a["n_samples"], int) and a["n_samples"] >= 1, "acquisition.n_samples must be >= 1"),
        (isinstance(a["ei_steps"], int) and a["ei_steps"] >= 0, "acquisition.ei_steps must be >= 0"),
        (_positive(a["ei_step_scale"]), "acquisition.ei_step_scale must be positive"),
        (e["family"] in (TOY, FORRESTER, None), "experiment.family must be toy or forrester"),
        (e["seeds"] is None or (isinstance(e["seeds"], list) and e["seeds"] and all(map(_seed_ok, e["seeds"]))),
         "experiment.seeds must be a non-empty list of non-negative integers"),
        (isinstance(e["n_seeds"], int) and e["n_seeds"] >= 1, "experiment.n_seeds must be >= 1"),
        (isinstance(e["shot_grid"], list) and e["shot_grid"]
         and all(isinstance(k, int) and k >= 0 for k in e["shot_grid"]),
         "experiment.shot_grid must be a non-empty list of non-negative integers"),
        (isinstance(e["bo_budget"], int) and e["bo_budget"] >= 0, "experiment.bo_budget must be >= 0"),
        (isinstance(e["methods"], list) and e["methods"] and set(e["methods"]) <= {"begp", "egp", "gp"},
         "experiment.methods must be drawn from begp, egp, gp"),
    ]
    for key in ("n_legacy_tasks", "points_per_task", "current_task_points", "baseline_restarts"):
        checks.append((isinstance(e[key], int) and e[key] >= 1, f"experiment.{key} must be >= 1"))
    for ok, message in checks:
        if not ok:
            raise UsageError(message)


def _positive(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) and v > 0


def _seed_ok(v):
    return isinstance(v, int) and not isinstance(v, bool) and 0 <= v < 2**63


def _entropy_seed() -> int:
    return int(np.random.SeedSequence().entropy % 2**32)


def resolve_seeds(cfg) -> dict:
    """Fill omitted seeds from entropy so the manifest records what ran."""
    cfg = copy.deepcopy(cfg)
    if cfg["train"]["seed"] is None:
        cfg["train"]["seed"] = _entropy_seed()
    if cfg["experiment"]["seeds"] is None:
        base = np.random.SeedSequence()
        cfg["experiment"]["seeds"] = [int(s) for s in base.generate_state(cfg["experiment"]["n_seeds"])]
    return cfg


def loop_config(cfg, method="begp") -> LoopConfig:
    m, t, a, e = cfg["model"], cfg["train"], cfg["acquisition"], cfg["experiment"]
    return LoopConfig(
        method=method,
        latent_dim=m["d_z"],
        latent_samples=m["latent_samples"],
        init_variance=float(m["init_variance"]),
        train=TrainConfig(t["iterations"], float(t["step_size"]), t["elbo_samples_per_step"], t["seed"]),
        warm_start_iterations=t["warm_start_iterations"],
        restarts=a["restarts"],
        ei_steps=a["ei_steps"],
        ei_step_scale=float(a["ei_step_scale"]),
        n_samples=a["n_samples"],
        baseline_restarts=e["baseline_restarts"],
    )


def experiment_config(cfg, base_dir=Path(".")) -> ExperimentConfig:
    e = cfg["experiment"]
    dataset = None
    family = e["family"]
    if e["dataset"] is not None:
        path = Path(e["dataset"])
        dataset = read_dataset(path if path.is_absolute() else base_dir / path)
        family = None
    elif family is None:
        raise UsageError("experiment needs a family or a dataset")
    return ExperimentConfig(
        family=family,
        dataset=dataset,
        n_legacy_tasks=e["n_legacy_tasks"],
        points_per_task=e["points_per_task"],
        current_task_points=e["current_task_points"],
        seeds=list(e["seeds"]),
        shot_grid=list(e["shot_grid"]),
        bo_budget=e["bo_budget"],
        methods=tuple(e["methods"]),
        loop=loop_config(cfg),
    )


# -- CSV input -----------------------------------------------------------------------


def _parse_header(header, need_y):
    if not header:
        raise UsageError("row 1: missing header")
    header = [h.strip() for h in header]
    n_task = 0
    while n_task < len(header) and header[n_task].startswith("task"):
        n_task += 1
    rest = header[n_task:]
    has_y = bool(rest) and rest[-1] == "y"
    xs = rest[:-1] if has_y else rest
    if need_y and not has_y:
        raise UsageError("row 1: last column must be y")
    if xs != [f"x{i + 1}" for i in range(len(xs))] or not xs:
        raise UsageError(f"row 1: expected columns x1..xd after the task columns, got {rest}")
    if any(h.startswith("task") for h in rest):
        raise UsageError("row 1: task columns must come first")
    return n_task, len(xs), has_y


def _read_rows(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    return list(csv.reader(io.StringIO(text)))


def _finite(value, row, col):
    try:
        v = float(value)
    except ValueError:
        raise UsageError(f"row {row}: column {col} is not a number: {value!r}") from None
    if not math.isfinite(v):
        raise UsageError(f"row {row}: column {col} is not finite")
    return v


def parse_table(path, need_tasks=True, need_y=True):
    """Parse a dataset-format CSV into ``(tasks, x, y or None, n_task_columns)``."""
    rows = _read_rows(path)
    if not rows:
        raise UsageError(f"{path}: empty file")
    n_task, d, has_y = _parse_header(rows[0], need_y)
    if need_tasks and n_task == 0:
        raise UsageError("row 1: at least one task column is required")
    width = n_task + d + int(has_y)
    header = [h.strip() for h in rows[0]]
    tasks, x, y = [], [], []
    for i, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != width:
            raise UsageError(f"row {i}: expected {width} fields, got {len(row)}")
        toks = tuple(c.strip() for c in row[:n_task])
        if any(t == "" for t in toks):
            raise UsageError(f"row {i}: empty task token")
        tasks.append(toks)
        x.append([_finite(row[n_task + j], i, header[n_task + j]) for j in range(d)])
        if has_y:
            y.append(_finite(row[-1], i, "y"))
    if not x:
        raise UsageError(f"{path}: no data rows")
    return tasks, np.array(x), (np.array(y) if has_y else None), n_task


def read_dataset(path) -> MultiTaskData:
    tasks, x, y, _ = parse_table(path)
    return MultiTaskData(tasks, x, y)


def _fmt(v) -> str:
    return repr(float(v))


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# -- results bundle -----------------------------------------------------------------


REGRESSION_METRICS = ("rmse", "mae", "mnlp")
BO_METRICS = ("y", "running_best", "acquisition")


def metric_rows(records, level, metrics):
    """Long-form ``(method, seed, x, metric, value)`` rows in record order."""
    rows = []
    for r in records:
        for m in metrics:
            rows.append([r["method"], r["seed"], r[level], m, _fmt(r[m])])
        if "x" in r and level == "evaluation":
            for j, v in enumerate(r["x"].split(";")):
                rows.append([r["method"], r["seed"], r[level], f"design_x{j + 1}", v])
    return rows


def write_bundle(out: Path, cfg, records, summary, level, metrics, started, status, error=None):
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "metrics.csv", ["method", "seed", "x", "metric", "value"], metric_rows(records, level, metrics))
    summary_doc = {
        "format_version": FORMAT_VERSION,
        "level": level,
        "rows": [
            {"method": s["method"], "seed": "aggregate", "x": s[level], **{k: s[k] for k in ("metric", "n", "q10", "median", "q90")}}
            for s in summary
        ],
    }
    (out / "summary.json").write_text(json.dumps(summary_doc, indent=1))
    manifest = {
        "format_version": FORMAT_VERSION,
        "code_version": __version__,
        "status": status,
        "config": cfg,
        "seeds": cfg["experiment"]["seeds"],
        "wall_time_seconds": time.perf_counter() - started,
    }
    if error is not None:
        manifest["error"] = error
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))


def _bench(args, regression: bool) -> int:
    from .bench.experiments import summarize

    cfg = resolve_seeds(load_config(args.config))
    base = Path(args.config).parent if args.config else Path(".")
    try:
        exp = experiment_config(cfg, base)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    level, metrics = ("shots", REGRESSION_METRICS) if regression else ("evaluation", BO_METRICS)
    summarized = metrics if regression else ("running_best",)
    runner = run_regression_experiment if regression else run_bo_experiment
    out = Path(args.out)
    started = time.perf_counter()
    records = []
    try:
        runner(exp, records)
    except Exception as exc:  # noqa: BLE001 - report, keep partial results
        logger.exception("benchmark failed")
        write_bundle(out, cfg, records, summarize(records, level, summarized), level, metrics, started, "failed", repr(exc))
        return EXIT_RUNTIME
    write_bundle(out, cfg, records, summarize(records, level, summarized), level, metrics, started, "ok")
    print(out / "metrics.csv")
    return EXIT_OK


def cmd_bench_regression(args) -> int:
    return _bench(args, regression=True)


def cmd_bench_bo(args) -> int:
    return _bench(args, regression=False)


# -- model commands -------------------------------------------------------------------


def _load_model(path) -> BegpModel:
    try:
        return BegpModel.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load model {path}: {exc}") from exc


def _task_arg(text, model: BegpModel):
    toks = tuple(t.strip() for t in text.split(","))
    if len(toks) != model.table.n_features or any(t == "" for t in toks):
        raise UsageError(f"--task needs {model.table.n_features} comma-separated token(s)")
    return toks


def cmd_fit(args) -> int:
    cfg = resolve_seeds(load_config(args.config))
    data = read_dataset(args.data)
    t = cfg["train"]
    model = BegpModel(
        cfg["model"]["d_z"], cfg["model"]["mode"], t["seed"],
        cfg["model"]["latent_samples"], float(cfg["model"]["init_variance"]),
    )
    model.fit(data, TrainConfig(t["iterations"], float(t["step_size"]), t["elbo_samples_per_step"], t["seed"]))
    model.save(args.model_out)
    print(f"fitted {len(data)} rows, {len(model.table.tokens[0])} task(s), seed {t['seed']}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = _load_model(args.model)
    tasks, x, _, n_task = parse_table(args.query, need_y=False)
    if n_task != model.table.n_features:
        raise UsageError(f"query has {n_task} task column(s), model expects {model.table.n_features}")
    if x.shape[1] != model.real_dim:
        raise UsageError(f"query has {x.shape[1]} x column(s), model expects {model.real_dim}")
    pred = model.predict(x, tasks)
    header = list(model.table.features) + [f"x{j + 1}" for j in range(x.shape[1])] + ["mean", "variance"]
    rows = [
        list(t) + [_fmt(v) for v in xi] + [_fmt(m), _fmt(s)]
        for t, xi, m, s in zip(tasks, x, pred.mean, pred.marginal_variance)
    ]
    if args.out:
        write_csv(args.out, header, rows)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return EXIT_OK


def _suggest_seed(model: BegpModel) -> int:
    return (model.seed * 1000003 + model.generation) % 2**32


def cmd_suggest(args) -> int:
    model = _load_model(args.model)
    cfg = load_config(args.config)
    a = cfg["acquisition"]
    task = _task_arg(args.task, model)
    seed = _suggest_seed(model)
    if args.candidates:
        if args.lower or args.upper:
            raise UsageError("give either --candidates or --lower/--upper")
        _, x, _, _ = parse_table(args.candidates, need_tasks=False, need_y=False)
        if x.shape[1] != model.real_dim:
            raise UsageError(f"candidates have {x.shape[1]} x column(s), model expects {model.real_dim}")
        observed = model.data.for_task(task).x
        evaluated = np.array([bool(len(observed)) and np.any(np.all(observed == xi, axis=1)) for xi in x])
        cands = FiniteDesignSet(x, evaluated=evaluated)
        idx = cands.unevaluated()
        if idx.size == 0:
            print("all candidates already evaluated", file=sys.stderr)
            return EXIT_RUNTIME
        if a["kind"] == "ei":
            pred = model.predict(x[idx], task)
            y_min = float(np.min(model.data.for_task(task).y)) if len(observed) else float(np.min(pred.mean))
            score = expected_improvement(pred.mean, pred.marginal_variance, y_min)
            pick, value = int(idx[int(np.argmin(score))]), float(np.min(score))
        else:
            p = prob_best(model, task, cands, a["n_samples"], seed)
            pick, value = int(idx[int(np.argmax(p))]), float(np.max(p))
        out = {"candidate": pick, "row": pick + 2, "x": x[pick].tolist(), "acquisition": value}
    else:
        if not (args.lower and args.upper):
            raise UsageError("continuous suggest needs --lower and --upper")
        if a["kind"] == "prob_best":
            raise UsageError("prob_best needs a finite --candidates set")
        try:
            space = ContinuousDesignSpace(_floats(args.lower), _floats(args.upper))
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        if space.dim != model.real_dim:
            raise UsageError(f"box has {space.dim} dimension(s), model expects {model.real_dim}")
        x_next, value = maximize_ei(
            model, task, space, a["restarts"], seed, a["ei_steps"], a["ei_step_scale"]
        )
        out = {"x": x_next.tolist(), "acquisition": value}
    print(json.dumps(out))
    return EXIT_OK


def cmd_observe(args) -> int:
    model = _load_model(args.model)
    cfg = load_config(args.config)
    task = _task_arg(args.task, model)
    x = np.array(_floats(args.x))
    if x.shape[0] != model.real_dim:
        raise UsageError(f"--x has {x.shape[0]} value(s), model expects {model.real_dim}")
    if not math.isfinite(args.y):
        raise UsageError("--y must be finite")
    t = cfg["train"]
    data = model.data.append(task, x, args.y)
    model.fit(
        data,
        TrainConfig(t["warm_start_iterations"], float(t["step_size"]), t["elbo_samples_per_step"], model.seed, True),
    )
    model.save(args.model)
    print(f"observed task {','.join(task)}; model now has {len(data)} rows")
    return EXIT_OK


def _floats(text):
    try:
        vals = [float(v) for v in str(text).split(",")]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None
    if not all(math.isfinite(v) for v in vals):
        raise UsageError("values must be finite")
    return vals


# -- parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="begp", description="Bayesian embedding GP for multi-task optimization")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    for name, fn, helptext in (
        ("bench-regression", cmd_bench_regression, "regression shot sweep"),
        ("bench-bo", cmd_bench_bo, "Bayesian optimization benchmark"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", help="YAML config or a previous manifest.json")
        s.add_argument("--out", required=True, help="results directory")
        s.set_defaults(func=fn)

    s = sub.add_parser("fit", help="train a model on a dataset CSV")
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--model-out", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("predict", help="per-row predictive mean and variance")
    s.add_argument("--model", required=True)
    s.add_argument("--query", required=True, help="CSV with task and x columns")
    s.add_argument("--out")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("suggest", help="next design for a task")
    s.add_argument("--model", required=True)
    s.add_argument("--task", required=True, help="comma-separated tokens, one per task column")
    s.add_argument("--candidates", help="CSV of x1..xd candidate designs")
    s.add_argument("--lower", help="comma-separated lower bounds")
    s.add_argument("--upper", help="comma-separated upper bounds")
    s.add_argument("--config")
    s.set_defaults(func=cmd_suggest)

    s = sub.add_parser("observe", help="add an observation and warm-start refit in place")
    s.add_argument("--model", required=True)
    s.add_argument("--task", required=True)
    s.add_argument("--x", required=True, help="comma-separated design values")
    s.add_argument("--y", required=True, type=float)
    s.add_argument("--config")
    s.set_defaults(func=cmd_observe)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 1
        logger.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
