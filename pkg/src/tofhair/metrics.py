"""Intersection-over-union scores for label maps."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from tofhair.errors import InvalidArgumentError


def _pair(pred, gt):
    p = np.asarray(pred)
    g = np.asarray(gt)
    if p.shape != g.shape:
        raise InvalidArgumentError(f"label maps differ in shape: {p.shape} vs {g.shape}")
    return p, g


def iou(pred, gt, label) -> float:
    """|pred==label & gt==label| / |pred==label | gt==label|.

    A label absent from both maps scores 1.0.
    """
    p, g = _pair(pred, gt)
    a = p == label
    b = g == label
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a & b)) / union


def miou(pred, gt, labels) -> float:
    labels = list(labels)
    if not labels:
        raise InvalidArgumentError("empty label set")
    return float(np.mean([iou(pred, gt, lab) for lab in labels]))


@dataclass
class EvalReport:
    labels: list
    names: list
    iou: list
    intersection: list
    union: list
    absent: list = field(default_factory=list)

    @property
    def miou(self) -> float:
        return float(np.mean(self.iou))

    def as_dict(self) -> dict:
        return {
            "miou": self.miou,
            "per_label": [
                {
                    "label": int(lab),
                    "name": name,
                    "iou": float(v),
                    "intersection": int(i),
                    "union": int(u),
                    "absent_in_both": bool(u == 0),
                }
                for lab, name, v, i, u in zip(self.labels, self.names, self.iou, self.intersection, self.union)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["label", "name", "iou", "intersection", "union"])
        for lab, name, v, i, u in zip(self.labels, self.names, self.iou, self.intersection, self.union):
            writer.writerow([int(lab), name, repr(float(v)), int(i), int(u)])
        writer.writerow(["mean", "miou", repr(self.miou), "", ""])
        return buf.getvalue()


def evaluate(pred, gt, labels, names=None) -> EvalReport:
    p, g = _pair(pred, gt)
    labels = list(labels)
    if not labels:
        raise InvalidArgumentError("empty label set")
    names = list(names) if names is not None else [str(lab) for lab in labels]
    inter, union, scores = [], [], []
    for lab in labels:
        a = p == lab
        b = g == lab
        i = int(np.count_nonzero(a & b))
        u = int(np.count_nonzero(a | b))
        inter.append(i)
        union.append(u)
        scores.append(1.0 if u == 0 else i / u)
    return EvalReport(labels, names, scores, inter, union)
