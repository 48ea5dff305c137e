"""Offline reductions over run directories: Table-1 style score/speedup tables."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .metrics import frames_to_score, record_score, score_at_frames

TOP_K = 3


def read_jsonl(path) -> List[dict]:
    path = Path(path)
    out = []
    try:
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
                if not isinstance(rec, dict):
                    raise ValueError(f"{path}:{lineno}: expected a JSON object")
                out.append(rec)
    except OSError as exc:
        raise ValueError(f"cannot read {path}: {exc}") from None
    return out


def load_run(run_dir) -> List[dict]:
    """Metric records of a run, checked for the fields the report needs."""
    path = Path(run_dir) / "metrics.jsonl"
    records = read_jsonl(path)
    if not records:
        raise ValueError(f"{path}: no metric records")
    for i, rec in enumerate(records, start=1):
        for key in ("member_id", "frames"):
            if not isinstance(rec.get(key), int):
                raise ValueError(f"{path}: record {i} lacks integer {key!r}")
    return records


def score_stream(records: Sequence[dict], top_k: int = TOP_K) -> List[dict]:
    """Collapse a (possibly multi-member) record stream to one score per frame stamp.

    With several members the score at each stamp is the mean over the best
    ``top_k`` members' latest scores.
    """
    by_member: Dict[int, List[dict]] = {}
    for rec in records:
        by_member.setdefault(rec["member_id"], []).append(rec)
    if len(by_member) == 1:
        return [{"frames": r["frames"], "score": record_score(r)} for r in records]
    for recs in by_member.values():
        recs.sort(key=lambda r: r["frames"])
    out = []
    for f in sorted({r["frames"] for r in records}):
        scores = [score_at_frames(recs, f) for recs in by_member.values()]
        scores = sorted((s for s in scores if s is not None), reverse=True)[:top_k]
        if scores:
            out.append({"frames": f, "score": math.fsum(scores) / len(scores)})
    return out


def _score(rec):
    return rec["score"]


def run_row(name: str, stream: Sequence[dict], frames_points: Sequence[int],
            thresholds: Sequence[float]) -> dict:
    row = {"run": name}
    for f in frames_points:
        row[f"score_at_{f}"] = score_at_frames(stream, f, key=_score)
    for t in thresholds:
        row[f"frames_to_{t:g}"] = frames_to_score(stream, t, key=_score)
    return row


def improvement_row(base: dict, other: dict, frames_points, thresholds) -> dict:
    """Percent score improvement at each frame point and speedup at each threshold."""
    row = {"run": f"improvement {other['run']} vs {base['run']}"}
    for f in frames_points:
        k = f"score_at_{f}"
        b, o = base[k], other[k]
        row[k] = None if b is None or o is None or b == 0 else f"{100.0 * (o - b) / abs(b):+.1f}%"
    for t in thresholds:
        k = f"frames_to_{t:g}"
        b, o = base[k], other[k]
        row[k] = None if b is None or o is None or o == 0 else f"{b / o:.2f}x"
    return row


def build_report(run_dirs: Sequence, frames_points: Sequence[int], thresholds: Sequence[float]) -> List[dict]:
    """One row per run, then (with two or more runs) an improvement row per run
    measured against the first run as baseline."""
    rows = [run_row(Path(d).name or str(d), score_stream(load_run(d)), frames_points, thresholds)
            for d in run_dirs]
    extra = [improvement_row(rows[0], r, frames_points, thresholds) for r in rows[1:]]
    return rows + extra


def report_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    cols = list(rows[0])
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: "" if v is None else (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()
