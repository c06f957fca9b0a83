import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import iou_brute
from tofhair.errors import InvalidArgumentError
from tofhair.metrics import evaluate, iou, miou

labelings = arrays(np.int64, (8, 8), elements=st.integers(0, 3))


def test_identical():
    x = np.array([[0, 1], [1, 2]])
    assert iou(x, x, 1) == 1.0
    assert miou(x, x, [0, 1, 2]) == 1.0


def test_half_coverage():
    gt = np.zeros((10, 20), int)
    gt[:, :10] = 1
    pred = np.zeros_like(gt)
    pred[:5, :10] = 1
    assert iou(pred, gt, 1) == 0.5


def test_disjoint():
    gt = np.array([[1, 0, 0]])
    pred = np.array([[0, 0, 1]])
    assert iou(pred, gt, 1) == 0.0


def test_absent_in_both():
    x = np.zeros((3, 3), int)
    assert iou(x, x, 4) == 1.0


def test_mean_of_one_and_zero():
    gt = np.array([[0, 1]])
    pred = np.array([[0, 0]])
    # label 0: 1/2, label 2: absent in both
    assert miou(pred, gt, [1, 2]) == 0.5


def test_errors():
    with pytest.raises(InvalidArgumentError):
        iou(np.zeros((2, 2)), np.zeros((2, 3)), 0)
    with pytest.raises(InvalidArgumentError):
        miou(np.zeros((2, 2)), np.zeros((2, 2)), [])


@given(labelings, labelings)
def test_brute_force(pred, gt):
    for lab in range(4):
        assert abs(iou(pred, gt, lab) - iou_brute(pred, gt, lab)) < 1e-12
    ref = np.mean([iou_brute(pred, gt, lab) for lab in range(4)])
    assert abs(miou(pred, gt, range(4)) - ref) < 1e-12


@given(labelings, labelings, st.permutations([0, 1, 2, 3]))
def test_symmetry_and_relabeling(pred, gt, perm):
    perm = np.array(perm)
    for lab in range(4):
        assert iou(pred, gt, lab) == iou(gt, pred, lab)
        assert iou(perm[pred], perm[gt], perm[lab]) == iou(pred, gt, lab)
    assert miou(pred, gt, [3, 1, 0, 2]) == pytest.approx(miou(pred, gt, [0, 1, 2, 3]), abs=1e-15)


@given(labelings, labelings)
def test_bounds(pred, gt):
    for lab in range(5):
        assert 0.0 <= iou(pred, gt, lab) <= 1.0


def test_report():
    gt = np.array([[0, 1, 1], [2, 2, 2]])
    pred = np.array([[0, 1, 2], [2, 2, 0]])
    rep = evaluate(pred, gt, [0, 1, 2], ["background", "face", "hair"])
    assert rep.intersection == [1, 1, 2]
    assert rep.union == [2, 2, 4]
    assert rep.miou == pytest.approx((0.5 + 0.5 + 0.5) / 3)
    data = json.loads(rep.to_json())
    assert data["miou"] == rep.miou and data["per_label"][2]["name"] == "hair"
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert rows[0] == ["label", "name", "iou", "intersection", "union"]
    assert rows[-1][:2] == ["mean", "miou"] and float(rows[-1][2]) == rep.miou
