"""Command-line front end: dataset generation, the three training phases,
evaluation, reporting, and config sweeps."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import behavior as behavior_mod
from . import checkpoint as ckpt
from . import data as data_mod
from . import train as train_mod
from .config import TrainConfig
from .model import num_parameters
from .scenarios import build_scenario
from .sim import average_delay

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

OUTPUT_ENV = "DTLIGHT_OUT"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _out_root(args) -> Path:
    root = Path(args.out or os.environ.get(OUTPUT_ENV, "runs"))
    root.mkdir(parents=True, exist_ok=True)
    return root


def _load_config(args) -> TrainConfig:
    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    if args.set:
        cfg = cfg.with_overrides(args.set)
    return cfg


def _write_json(path: Path, doc: dict):
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
    os.replace(tmp, path)


def _dataset_paths(root: Path, cfg: TrainConfig) -> list[Path]:
    net = build_scenario(cfg.scenario, cfg.rate_preset)
    return [
        root / "data" / f"{net.name}_{cfg.behavior}_{inter.id}.json"
        for inter in net.sorted_intersections()
    ]


def _load_datasets(root: Path, cfg: TrainConfig) -> dict[str, data_mod.Dataset]:
    out = {}
    for path in _dataset_paths(root, cfg):
        if not path.exists():
            raise FileNotFoundError(
                f"dataset {path} missing; run `dtlight gen-data` first"
            )
        ds = data_mod.load_dataset(path)
        out[ds.agent_id] = ds
    return out


def _provenance(cfg: TrainConfig, inputs: list[Path]) -> dict:
    return {
        "config": cfg.to_dict(),
        "inputs": {str(p): _sha256(p) for p in inputs},
    }


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    root = _out_root(args)
    net = build_scenario(cfg.scenario, cfg.rate_preset)
    spec = behavior_mod.BehaviorSpec(kind=cfg.behavior, epsilon=cfg.epsilon)
    paths = behavior_mod.generate_dataset(
        spec, net, root / "data", episodes=cfg.episodes, seed=cfg.seed,
        delta=cfg.neighbor_discount,
    )
    for p in paths:
        print(f"wrote {p} sha256={_sha256(p)}")
    return EXIT_OK


def _ckpt_prefix(root: Path, phase: str, agent_id: str) -> Path:
    return root / f"{phase}_{agent_id}"


def cmd_train_teacher(args) -> int:
    cfg = _load_config(args)
    root = _out_root(args)
    datasets = _load_datasets(root, cfg)
    prov_inputs = _dataset_paths(root, cfg)
    for agent_id, ds in sorted(datasets.items()):
        policy, losses = train_mod.train_teacher(ds, cfg, seed=cfg.seed)
        extra = _provenance(cfg, prov_inputs)
        extra["phase"] = "teacher"
        extra["final_loss"] = losses[-1]["loss"] if losses else None
        path = ckpt.save_checkpoint(
            _ckpt_prefix(root, "teacher", agent_id), policy, policy.cfg, extra
        )
        print(f"wrote {path} ({num_parameters(policy)} params)")
    return EXIT_OK


def _load_policy(root: Path, phase: str, agent_id: str,
                 lambda_init: float) -> train_mod.StochasticPolicy:
    prefix = _ckpt_prefix(root, phase, agent_id)
    manifest = ckpt.load_manifest(prefix)
    cfg = ckpt.config_from_dict(manifest["model_config"])
    policy = train_mod.StochasticPolicy(cfg, lambda_init=lambda_init)
    ckpt.load_checkpoint(prefix, policy)
    policy.eval()
    return policy


def cmd_distill(args) -> int:
    cfg = _load_config(args)
    root = _out_root(args)
    datasets = _load_datasets(root, cfg)
    for agent_id, ds in sorted(datasets.items()):
        teacher = _load_policy(root, "teacher", agent_id, cfg.lambda_init)
        student, history = train_mod.distill(teacher, ds, cfg, seed=cfg.seed)
        agreement = train_mod.greedy_agreement(student, teacher, ds, cfg)
        extra = _provenance(
            cfg, _dataset_paths(root, cfg)
            + [_ckpt_prefix(root, "teacher", agent_id).with_suffix(".bin")]
        )
        extra["phase"] = "student"
        extra["teacher_agreement"] = agreement
        path = ckpt.save_checkpoint(
            _ckpt_prefix(root, "student", agent_id), student, student.cfg, extra
        )
        print(f"wrote {path} (agreement {agreement:.3f})")
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = _load_config(args)
    root = _out_root(args)
    datasets = _load_datasets(root, cfg)
    net = build_scenario(cfg.scenario, cfg.rate_preset)
    students = {
        a: _load_policy(root, "student", a, cfg.lambda_init) for a in datasets
    }
    students, stats = train_mod.finetune_online(
        students, datasets, net, cfg, seed=cfg.seed
    )
    for agent_id, policy in sorted(students.items()):
        extra = _provenance(
            cfg, [_ckpt_prefix(root, "student", agent_id).with_suffix(".bin")]
        )
        extra["phase"] = "finetuned"
        extra["episodes"] = stats
        path = ckpt.save_checkpoint(
            _ckpt_prefix(root, "finetuned", agent_id), policy, policy.cfg, extra
        )
        print(f"wrote {path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    root = _out_root(args)
    net = build_scenario(cfg.scenario, cfg.rate_preset)
    seeds = [cfg.seed + 10000 + i for i in range(cfg.eval_seeds)]
    method = args.method

    if method in ("fixed_time", "max_pressure", "emp"):
        spec = behavior_mod.BehaviorSpec(kind=method, epsilon=cfg.epsilon)

        def make_agents(seed):
            return behavior_mod.make_policies(spec, net, seed)

        report = train_mod.evaluate_policies(
            make_agents, net, seeds, method, delta=cfg.neighbor_discount,
            config=cfg.to_dict(),
        )
    elif method in ("teacher", "student", "finetuned"):
        datasets = _load_datasets(root, cfg)
        policies = {
            a: _load_policy(root, method, a, cfg.lambda_init) for a in datasets
        }
        rtg_inits = {
            a: cfg.gamma_eval * data_mod.max_offline_return(ds)
            for a, ds in datasets.items()
        }
        report = train_mod.evaluate_dt(
            policies, net, rtg_inits, cfg, seeds, method=f"dtlight-{method}"
        )
        report.config = cfg.to_dict()
    else:
        print(f"error: unknown eval method {method!r}", file=sys.stderr)
        return EXIT_USAGE
    path = root / f"eval_{report.method}.json"
    _write_json(path, report.to_dict())
    print(f"wrote {path}: delay {report.mean_delay:.2f}"
          + (f" +- {report.std_delay:.2f}" if len(seeds) >= 2 else ""))
    return EXIT_OK


def _render_table(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join(
        "  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in rows
    )


def cmd_report(args) -> int:
    root = _out_root(args)
    reports = []
    for path in sorted(root.glob("eval_*.json")):
        with open(path) as f:
            reports.append(json.load(f))
    if not reports:
        print("error: no eval reports found", file=sys.stderr)
        return EXIT_RUNTIME
    scenarios = sorted({r["scenario"] for r in reports})
    methods = sorted({r["method"] for r in reports})
    by_key = {(r["method"], r["scenario"]): r for r in reports}
    behavior_delay = {
        s: next(
            (by_key[m, s]["mean_delay"] for m in methods
             if (m, s) in by_key and m in ("emp", "max_pressure")),
            None,
        )
        for s in scenarios
    }

    delay_rows = [["method"] + scenarios + ["improvement_pct"]]
    for m in methods:
        row = [m]
        improvements = []
        for s in scenarios:
            r = by_key.get((m, s))
            if r is None:
                row.append("-")
                continue
            cell = f"{r['mean_delay']:.2f}"
            if len(r["seeds"]) >= 2:
                cell += f"+-{r['std_delay']:.2f}"
            row.append(cell)
            base = behavior_delay[s]
            if base:
                improvements.append(100.0 * (base - r["mean_delay"]) / base)
        row.append(f"{np.mean(improvements):.1f}" if improvements else "-")
        delay_rows.append(row)

    size_rows = [["method", "params", "trainable", "wall_clock_s"]]
    for m in methods:
        rs = [r for r in reports if r["method"] == m]
        r = rs[0]
        if r["param_total"]:
            size_rows.append([
                m, str(r["param_total"]), str(r["param_trainable"]),
                f"{sum(x['wall_clock_s'] for x in rs):.1f}",
            ])

    csv_path = root / "report.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerows(delay_rows)
        if len(size_rows) > 1:
            writer.writerow([])
            writer.writerows(size_rows)
    text = _render_table(delay_rows)
    if len(size_rows) > 1:
        text += "\n\n" + _render_table(size_rows)
    (root / "report.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    root = _out_root(args)
    values = args.values.split(",")
    results = []
    for v in values:
        sub = argparse.Namespace(
            config=args.config, set=(args.set or []) + [f"{args.key}={v}"],
            out=str(root / f"sweep_{args.key}_{v}"),
        )
        for step in args.steps.split(","):
            handler = {
                "gen-data": cmd_gen_data,
                "train-teacher": cmd_train_teacher,
                "distill": cmd_distill,
                "finetune": cmd_finetune,
            }.get(step)
            if handler is None:
                print(f"error: unknown sweep step {step!r}", file=sys.stderr)
                return EXIT_USAGE
            rc = handler(sub)
            if rc != EXIT_OK:
                return rc
        results.append((v, sub.out))
    for v, out in results:
        print(f"{args.key}={v}: {out}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="dtlight")
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key")
    parser.add_argument("--out", help=f"output root (default ${OUTPUT_ENV} or ./runs)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", help="generate offline datasets")
    sub.add_parser("train-teacher", help="pre-train the teacher policy")
    sub.add_parser("distill", help="distill the student policy")
    sub.add_parser("finetune", help="online adapter fine-tuning")
    p_eval = sub.add_parser("eval", help="evaluate a method")
    p_eval.add_argument("method",
                        help="fixed_time | max_pressure | emp | teacher | "
                             "student | finetuned")
    sub.add_parser("report", help="aggregate eval reports into tables")
    p_sweep = sub.add_parser("sweep", help="run the pipeline over config values")
    p_sweep.add_argument("key")
    p_sweep.add_argument("values", help="comma-separated values")
    p_sweep.add_argument("--steps",
                         default="gen-data,train-teacher,distill,finetune")
    return parser


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train-teacher": cmd_train_teacher,
    "distill": cmd_distill,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "report": cmd_report,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return HANDLERS[args.command](args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
