"""Command-line experiment driver.

Exit status: 0 on success, 1 on configuration errors, 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import nets
from .actor_learner import new_member, run_member, run_population
from .config import ExperimentConfig, parse_config, serialize_config
from .errors import ConfigError
from .metrics import ReferenceTable, calibrate_references, record_score
from .report import build_report, read_jsonl, report_csv
from .teachers import Teacher, load_teacher, save_teacher, train_expert

log = logging.getLogger("kickstart")

ARTIFACTS = ("config.txt", "metrics.jsonl", "population.jsonl", "summary.csv",
             "teacher.kste", "reference_table.txt")
SUMMARY_COLUMNS = ["member_id", "frames", "final_score", "best_score", "final_mean_return", "lineage"]

METRIC_SCHEMA = {
    "type": "object",
    "required": ["member_id", "frames", "source", "returns", "mean_return", "mean_capped_score",
                 "lambda", "learning_rate", "entropy_cost", "loss"],
    "properties": {
        "member_id": {"type": "integer", "minimum": 0},
        "frames": {"type": "integer", "minimum": 0},
        "source": {"enum": ["eval", "window"]},
        "returns": {"type": "object", "additionalProperties": {"type": ["number", "null"]}},
        "mean_return": {"type": ["number", "null"]},
        "mean_capped_score": {"type": ["number", "null"], "maximum": 100},
        "lambda": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
        "entropy_cost": {"type": "number", "minimum": 0},
        "loss": {
            "type": ["object", "null"],
            "required": ["policy_gradient", "value", "entropy", "distill", "total"],
            "properties": {
                "distill": {"type": "array", "items": {"type": "number"}},
            },
        },
    },
}
POPULATION_SCHEMA = {
    "type": "object",
    "required": ["member_id", "action", "lineage", "learning_rate", "entropy_cost",
                 "distill_global", "distill_per_teacher"],
    "properties": {
        "member_id": {"type": "integer", "minimum": 0},
        "action": {"type": "string", "pattern": "^(explored|final|copied-from-[0-9]+)$"},
        "lineage": {"type": "integer", "minimum": 0},
        "round": {"type": "integer", "minimum": 1},
        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
        "entropy_cost": {"type": "number", "minimum": 0},
        "distill_global": {"type": "number", "minimum": 0},
        "distill_per_teacher": {"type": "array", "items": {"type": "number", "minimum": 0}},
    },
}


class JsonlWriter:
    def __init__(self, path: Path):
        self.f = open(path, "w", encoding="utf-8")

    def __call__(self, rec: dict) -> None:
        self.f.write(json.dumps(rec, sort_keys=True) + "\n")

    def close(self) -> None:
        self.f.close()


def prepare_out(out: Path, overwrite: bool) -> Path:
    """Create ``out``; refuse to reuse a non-empty directory unless ``overwrite``."""
    if out.exists() and not out.is_dir():
        raise ConfigError(f"output path {out} exists and is not a directory")
    if out.exists() and any(out.iterdir()):
        if not overwrite:
            raise ConfigError(f"output directory {out} is not empty (pass --overwrite to reuse it)")
        # only remove what we write ourselves
        for name in ARTIFACTS:
            (out / name).unlink(missing_ok=True)
        ckpt = out / "checkpoints"
        if ckpt.is_dir():
            for p in ckpt.glob("*.ksrl"):
                p.unlink()
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    return out


def _member_summary(member, records) -> dict:
    own = [r for r in records if r["member_id"] == member.member_id]
    scores = [s for s in (record_score(r) for r in own) if s is not None]
    return {
        "member_id": member.member_id,
        "frames": member.frames,
        "final_score": scores[-1] if scores else None,
        "best_score": max(scores) if scores else None,
        "final_mean_return": own[-1]["mean_return"] if own else None,
        "lineage": member.lineage,
    }


def write_summary(path: Path, rows: List[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: "" if row[k] is None else (repr(row[k]) if isinstance(row[k], float) else row[k])
                        for k in SUMMARY_COLUMNS})


def _final_event(member) -> dict:
    h = member.hypers
    return {"member_id": member.member_id, "action": "final", "lineage": member.lineage,
            "frames": member.frames, "score": member.latest_score(),
            "learning_rate": h.learning_rate, "entropy_cost": h.entropy_cost,
            "distill_global": h.distill_global, "distill_per_teacher": list(h.distill_per_teacher)}


def _load_refs(cfg: ExperimentConfig) -> Optional[ReferenceTable]:
    if not cfg.reference_table:
        return None
    refs = ReferenceTable.load(cfg.reference_table)
    missing = [t for t in cfg.tasks if t not in refs.random_score]
    if missing:
        raise ConfigError(f"{cfg.reference_table}: no reference for tasks {missing}")
    return refs


def _load_teachers(cfg: ExperimentConfig) -> List[Teacher]:
    teachers = []
    for p in cfg.teacher_paths:
        if not Path(p).is_file():
            raise ConfigError(f"teacher file {p} not found")
        teachers.append(load_teacher(p))
    return teachers


def train(cfg: ExperimentConfig, out: Path) -> int:
    """Run one training configuration (single member or population) into ``out``."""
    tasks = cfg.suite()
    settings = cfg.run_settings()
    teachers = _load_teachers(cfg) if settings.uses_teachers else []
    refs = _load_refs(cfg)
    ckpt = out / "checkpoints"
    metrics = JsonlWriter(out / "metrics.jsonl")
    population = JsonlWriter(out / "population.jsonl")
    records: List[dict] = []
    try:
        if cfg.population_size > 1:
            members: list = []
            stream = run_population(tasks, settings, cfg.seed, teachers, refs=refs, checkpoint_dir=ckpt,
                                    on_pbt_event=population, members_out=members)
        else:
            members = [new_member(0, tasks, settings, cfg.seed, len(teachers))]
            stream = run_member(members[0], tasks, settings, cfg.seed, teachers, refs=refs, checkpoint_dir=ckpt)
        for rec in stream:
            metrics(rec)
            records.append(rec)
        for m in members:
            nets.save_checkpoint(ckpt / f"member{m.member_id}_final.ksrl", m.net, m.hypers)
            population(_final_event(m))
    finally:
        metrics.close()
        population.close()
    write_summary(out / "summary.csv", [_member_summary(m, records) for m in members])
    return 0


def cmd_train(args, cfg: ExperimentConfig) -> int:
    mode = {"scratch": "scratch", "distill": "distill-only"}.get(args.command)
    if args.command == "kickstart":
        mode = cfg.mode if cfg.mode.startswith("kickstart") else (
            "kickstart-multi" if len(cfg.teacher_paths) > 1 else "kickstart-single")
    if args.command == "pbt":
        if cfg.population_size < 2:
            raise ConfigError("pbt needs pbt.population_size >= 2")
        mode = cfg.mode
    cfg = cfg.replace(mode=mode)
    if args.command != "pbt" and cfg.population_size > 1:
        cfg = cfg.replace(population_size=1)
    out = _start(args, cfg)
    return train(cfg, out)


def cmd_train_expert(args, cfg: ExperimentConfig) -> int:
    cfg = cfg.replace(mode="scratch", teacher_paths=())
    out = _start(args, cfg)
    metrics = JsonlWriter(out / "metrics.jsonl")
    records = []

    def on_record(rec):
        metrics(rec)
        records.append(rec)

    try:
        teacher = train_expert(cfg.tasks if len(cfg.tasks) > 1 else cfg.suite(), cfg.frame_budget, cfg.seed,
                               cfg.run_settings(), on_record=on_record)
    finally:
        metrics.close()
    save_teacher(out / "teacher.kste", teacher)
    member = new_member(0, cfg.suite(), cfg.run_settings(), cfg.seed)
    member.frames = teacher.provenance["frames"]
    write_summary(out / "summary.csv", [_member_summary(member, records)])
    JsonlWriter(out / "population.jsonl").close()
    return 0


def cmd_calibrate(args, cfg: ExperimentConfig) -> int:
    out = _start(args, cfg)
    table = calibrate_references(cfg.suite(), cfg.frame_budget, cfg.seed, cfg.run_settings().replace(mode="scratch"))
    table.save(out / "reference_table.txt")
    for t in table.task_ids:
        print(f"{t}\trandom={table.random_score[t]:.4f}\treference={table.reference_score[t]:.4f}"
              + ("\tFLAGGED" if table.flagged[t] else ""))
    return 0


def cmd_report(args) -> int:
    frames = [int(x) for x in args.frames.split(",")] if args.frames else []
    thresholds = [float(x) for x in args.thresholds.split(",")] if args.thresholds else []
    text = report_csv(build_report(args.runs, frames, thresholds))
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def selfcheck_dir(run_dir) -> List[str]:
    """Validate every known artifact in ``run_dir``; returns a list of problems."""
    import jsonschema

    run_dir = Path(run_dir)
    problems = []
    if not run_dir.is_dir():
        return [f"{run_dir}: not a directory"]
    for name, schema in (("metrics.jsonl", METRIC_SCHEMA), ("population.jsonl", POPULATION_SCHEMA)):
        path = run_dir / name
        if not path.exists():
            continue
        try:
            recs = read_jsonl(path)
        except ValueError as exc:
            problems.append(str(exc))
            continue
        for i, rec in enumerate(recs, start=1):
            try:
                jsonschema.validate(rec, schema)
            except jsonschema.ValidationError as exc:
                problems.append(f"{path}: record {i}: {exc.message}")
        if name == "metrics.jsonl":
            last = {}
            for i, rec in enumerate(recs, start=1):
                m = rec.get("member_id")
                if isinstance(rec.get("frames"), int) and rec["frames"] < last.get(m, 0):
                    problems.append(f"{path}: record {i}: frames go backwards for member {m}")
                last[m] = rec.get("frames", 0)
    summary = run_dir / "summary.csv"
    if summary.exists():
        with open(summary, encoding="utf-8") as f:
            header = next(csv.reader(f), None)
        if header != SUMMARY_COLUMNS:
            problems.append(f"{summary}: unexpected header {header}")
    for p in sorted((run_dir / "checkpoints").glob("*.ksrl")):
        try:
            nets.load_checkpoint(p)
        except Exception as exc:  # report, keep checking
            problems.append(f"{p}: {exc}")
    if (run_dir / "teacher.kste").exists():
        try:
            load_teacher(run_dir / "teacher.kste")
        except Exception as exc:
            problems.append(f"{run_dir / 'teacher.kste'}: {exc}")
    if (run_dir / "reference_table.txt").exists():
        try:
            ReferenceTable.load(run_dir / "reference_table.txt")
        except Exception as exc:
            problems.append(f"{run_dir / 'reference_table.txt'}: {exc}")
    return problems


def cmd_selfcheck(args) -> int:
    problems = [p for d in args.runs for p in selfcheck_dir(d)]
    for p in problems:
        print(p, file=sys.stderr)
    if not problems:
        print(f"ok: {len(args.runs)} run director{'y' if len(args.runs) == 1 else 'ies'} valid")
    return 2 if problems else 0


def _start(args, cfg: ExperimentConfig) -> Path:
    out = prepare_out(Path(args.out or cfg.out), args.overwrite)
    (out / "config.txt").write_text(serialize_config(cfg), encoding="utf-8")
    return out


def _load_config(args) -> ExperimentConfig:
    cfg = parse_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.deterministic:
        changes["deterministic"] = True
    if args.out:
        changes["out"] = args.out
    return cfg.replace(**changes) if changes else cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kickstart", description="Kickstarting experiments on a gridworld suite.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "calibrate": "random and expert reference scores per task",
        "train-expert": "train a teacher from scratch and freeze it",
        "scratch": "train without teachers",
        "kickstart": "train with one or more teachers",
        "distill": "distillation loss only, no RL terms",
        "pbt": "population based training",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--deterministic", action="store_true")
        sp.add_argument("--overwrite", action="store_true")
        sp.add_argument("--out", metavar="DIR")
    rp = sub.add_parser("report", help="Table-1 style CSV over run directories")
    rp.add_argument("runs", nargs="+", metavar="RUN_DIR")
    rp.add_argument("--frames", default="", help="comma-separated frame counts for score-at-frames columns")
    rp.add_argument("--thresholds", default="", help="comma-separated scores for frames-to-reach columns")
    rp.add_argument("--out", metavar="CSV")
    sc = sub.add_parser("selfcheck", help="validate emitted files against their schemas")
    sc.add_argument("runs", nargs="+", metavar="RUN_DIR")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args)
        if args.command == "selfcheck":
            return cmd_selfcheck(args)
        cfg = _load_config(args)
        if args.command == "calibrate":
            return cmd_calibrate(args, cfg)
        if args.command == "train-expert":
            return cmd_train_expert(args, cfg)
        return cmd_train(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
