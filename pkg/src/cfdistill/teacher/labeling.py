"""Scenario labeling: query the teacher k times, filter, vote, persist.

A vote is valid when the reply parses and the value is finite and inside
[-5, 5] m/s^2. Scenarios with zero valid votes are kept but flagged so
training can drop them while the record of what happened survives. Raw reply
texts go to a separate JSONL file and each label row points back at them, so
labels can be re-derived from the raw responses alone.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..core import A_MAX, A_MIN
from .prompts import parse_acceleration
from .voting import majority_vote


@dataclass
class TeacherResponse:
    accel: float | None
    valid: bool
    text: str | None = None


@dataclass
class LabeledScenario:
    id: int
    v: float
    s: float
    dv: float
    votes: list = field(default_factory=list)
    label: float | None = None
    vote_count: int = 0
    flagged: bool = False
    error: str | None = None

    @property
    def state(self) -> tuple[float, float, float]:
        return (self.v, self.s, self.dv)


def judge_response(text: str) -> TeacherResponse:
    """Parse one reply and decide vote validity."""
    a = parse_acceleration(text)
    valid = a is not None and math.isfinite(a) and A_MIN <= a <= A_MAX
    return TeacherResponse(accel=a, valid=valid, text=text)


def _aggregate(idx: int, state, texts, error: str | None) -> LabeledScenario:
    v, s, dv = (float(x) for x in state)
    item = LabeledScenario(id=idx, v=v, s=s, dv=dv, error=error)
    if error is not None:
        item.flagged = True
        return item
    item.votes = [judge_response(t) for t in texts]
    valid = [r.accel for r in item.votes if r.valid]
    if not valid:
        item.flagged = True
        return item
    item.label, item.vote_count = majority_vote(valid)
    return item


def label_scenarios(scenarios, teacher, k: int = 5, max_workers: int = 1):
    """Label every scenario with k teacher replies each.

    `scenarios` is a ScenarioSet or an (N, 3) array. Per-scenario teacher
    failures are recorded on the item (flagged, error set), not raised, so a
    long run survives individual outages. Output order follows input order
    regardless of worker scheduling.
    """
    states = scenarios.states if hasattr(scenarios, "states") else np.atleast_2d(scenarios)
    if k < 1 or max_workers < 1:
        raise ValueError("k and max_workers must be >= 1")

    def ask(state):
        try:
            return teacher.generate(state, k), None
        except Exception as exc:
            return [], f"{type(exc).__name__}: {exc}"

    if max_workers == 1:
        answers = [ask(st) for st in states]
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            answers = list(pool.map(ask, states))
    return [
        _aggregate(i, st, texts, err)
        for i, (st, (texts, err)) in enumerate(zip(states, answers))
    ]


def save_labels(labeled, labels_path, responses_path=None) -> None:
    """Write labels JSONL, optionally with a raw-responses JSONL alongside."""
    raw_name = None
    if responses_path is not None:
        raw_name = str(responses_path).rsplit("/", 1)[-1]
        with open(responses_path, "w", encoding="utf-8") as fh:
            for item in labeled:
                for j, resp in enumerate(item.votes):
                    row = {"id": item.id, "k": j, "text": resp.text}
                    fh.write(json.dumps(row) + "\n")
    with open(labels_path, "w", encoding="utf-8") as fh:
        for item in labeled:
            row = {
                "id": item.id,
                "v": item.v,
                "s": item.s,
                "dv": item.dv,
                "label": item.label,
                "vote_count": item.vote_count,
                "flagged": item.flagged,
                "votes": [{"accel": r.accel, "valid": r.valid} for r in item.votes],
            }
            if item.error is not None:
                row["error"] = item.error
            if raw_name is not None:
                row["raw_refs"] = [
                    f"{raw_name}:{item.id}:{j}" for j in range(len(item.votes))
                ]
            fh.write(json.dumps(row) + "\n")


def load_labels(path) -> list[LabeledScenario]:
    """Read a labels JSONL back (raw texts stay on disk)."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            out.append(
                LabeledScenario(
                    id=int(row["id"]),
                    v=float(row["v"]),
                    s=float(row["s"]),
                    dv=float(row["dv"]),
                    votes=[
                        TeacherResponse(accel=r["accel"], valid=r["valid"])
                        for r in row.get("votes", [])
                    ],
                    label=None if row["label"] is None else float(row["label"]),
                    vote_count=int(row.get("vote_count", 0)),
                    flagged=bool(row.get("flagged", False)),
                    error=row.get("error"),
                )
            )
    return out
