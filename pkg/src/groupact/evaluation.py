"""Accuracy reports over a scene list.

Predictions are argmax over the model outputs. Confusion matrices index
rows by true label and columns by prediction; both accuracies are defined
as trace over total of the corresponding matrix, and the summary values are
computed exactly that way so the emitted files can never disagree.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError
from .fileio import atomic_write_text, f17
from .model import branch_inputs, predict
from .tensor import MODE_INFER

SUMMARY_FILE = "summary.csv"
GROUP_CONFUSION_FILE = "group_confusion.csv"
ACTION_CONFUSION_FILE = "action_confusion.csv"


@dataclass(eq=False)
class EvalReport:
    n_scenes: int
    group_confusion: np.ndarray  # (num_activities, num_activities) int
    action_confusion: np.ndarray  # (num_actions, num_actions) int

    @property
    def group_accuracy(self) -> float:
        return float(np.trace(self.group_confusion) / self.group_confusion.sum())

    @property
    def action_accuracy(self) -> float:
        return float(np.trace(self.action_confusion) / self.action_confusion.sum())

    def __eq__(self, other):
        if not isinstance(other, EvalReport):
            return NotImplemented
        return (
            self.n_scenes == other.n_scenes
            and np.array_equal(self.group_confusion, other.group_confusion)
            and np.array_equal(self.action_confusion, other.action_confusion)
        )


def evaluate_model(model, scenes, num_actions: int, num_activities: int) -> EvalReport:
    group_conf = np.zeros((num_activities, num_activities), dtype=np.int64)
    action_conf = np.zeros((num_actions, num_actions), dtype=np.int64)
    for scene in scenes:
        pred = model.forward(branch_inputs(scene), MODE_INFER)
        group, actions = predict(pred)
        group_conf[scene.activity, group] += 1
        for true_a, pred_a in zip(scene.actions, actions):
            action_conf[int(true_a), int(pred_a)] += 1
    return EvalReport(len(scenes), group_conf, action_conf)


def _confusion_csv(matrix: np.ndarray) -> str:
    n = matrix.shape[1]
    lines = ["true\\pred," + ",".join(str(c) for c in range(n))]
    for r, row in enumerate(matrix):
        lines.append(f"{r}," + ",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def _parse_confusion(path) -> np.ndarray:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("true\\pred,"):
        raise ParseError(path, 1, "bad confusion-matrix header")
    width = len(lines[0].split(",")) - 1
    rows = []
    for no, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != width + 1:
            raise ParseError(path, no, f"expected {width + 1} columns, got {len(cells)}")
        if cells[0] != str(no - 2):
            raise ParseError(path, no, f"expected row label {no - 2}, got {cells[0]!r}")
        try:
            rows.append([int(c) for c in cells[1:]])
        except ValueError:
            raise ParseError(path, no, "bad count") from None
    if len(rows) != width:
        raise ParseError(path, len(lines), f"expected {width} rows, got {len(rows)}")
    return np.array(rows, dtype=np.int64)


def write_report(report: EvalReport, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = "\n".join(
        [
            "metric,value",
            f"scenes,{report.n_scenes}",
            f"group_accuracy,{f17(report.group_accuracy)}",
            f"action_accuracy,{f17(report.action_accuracy)}",
        ]
    )
    atomic_write_text(out_dir / SUMMARY_FILE, summary + "\n")
    atomic_write_text(out_dir / GROUP_CONFUSION_FILE, _confusion_csv(report.group_confusion))
    atomic_write_text(out_dir / ACTION_CONFUSION_FILE, _confusion_csv(report.action_confusion))


def read_report(out_dir) -> EvalReport:
    out_dir = Path(out_dir)
    path = out_dir / SUMMARY_FILE
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "metric,value":
        raise ParseError(path, 1, "bad summary header")
    values = {}
    for no, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != 2:
            raise ParseError(path, no, "expected metric,value")
        values[cells[0]] = cells[1]
    for needed in ("scenes", "group_accuracy", "action_accuracy"):
        if needed not in values:
            raise ParseError(path, 1, f"summary is missing {needed!r}")
    report = EvalReport(
        int(values["scenes"]),
        _parse_confusion(out_dir / GROUP_CONFUSION_FILE),
        _parse_confusion(out_dir / ACTION_CONFUSION_FILE),
    )
    # The stored accuracy lines must agree with the matrices they sit next to.
    if float(values["group_accuracy"]) != report.group_accuracy:
        raise ParseError(path, 1, "group_accuracy disagrees with the confusion matrix")
    if float(values["action_accuracy"]) != report.action_accuracy:
        raise ParseError(path, 1, "action_accuracy disagrees with the confusion matrix")
    return report
