"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import hashlib
import os
import subprocess
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from acceptance_log import criterion
from oracles import gibbs_brute, iou_brute, variance_brute
from tofhair.config import load_config
from tofhair.crf import (
    CrfParams,
    FeatureField,
    UnaryField,
    gibbs_energy,
    grid_search_params,
    hair_score,
    map_labeling,
    mean_field_infer,
    refine,
)
from tofhair.metrics import iou, miou
from tofhair.noisemap import (
    HAIR_REGIONS,
    Region,
    RegionMask,
    default_sigma,
    region_histogram,
    restricted_variance,
    separability,
    shared_bin_edges,
    variance_map,
)
from tofhair.synth import camouflage_instance, render_head, two_region_instance
from tofhair.tofsim import DepthFrame, SceneSpec, ToFConfig, decode_four_samples, phase_to_depth, simulate_frame

IDENTITY = CrfParams(w1=0.0, w2=0.0)
FLIP_PARAMS = CrfParams(w1=1, w2=1, theta_alpha=3, theta_beta=10, theta_gamma=1, theta_delta=3)


def _random_crf(seed, h, w, labels=3):
    rng = np.random.default_rng([seed, 99])
    probs = rng.dirichlet(np.ones(labels), size=(h, w)).transpose(2, 0, 1)
    unary = UnaryField.from_probabilities([f"l{i}" for i in range(labels)], probs)
    rgb = rng.uniform(0, 255, (h, w, 3))
    extra = rng.normal(size=(h, w, 2))
    params = CrfParams(
        w1=rng.uniform(0, 3),
        w2=rng.uniform(0, 3),
        theta_alpha=rng.uniform(0.5, 5),
        theta_beta=rng.uniform(5, 80),
        theta_gamma=rng.uniform(0.3, 3),
        theta_delta=rng.uniform(0.5, 5),
    )
    return unary, FeatureField.from_image(rgb, extra, normalize=False), rgb, extra, params


def test_c1_phase_roundtrip():
    with criterion(1, "phase roundtrip over 100 distances", 1.0) as info:
        cfg = ToFConfig.from_period(5e-8)
        rng = np.random.default_rng(1)
        d = rng.uniform(0.0, cfg.unambiguous_range, 100)
        d = np.clip(d, 1e-6, None).reshape(10, 10)
        frame, _ = simulate_frame(SceneSpec(distance=d), cfg)
        phase, _ = decode_four_samples(frame.a1, frame.a2, frame.a3, frame.a4)
        rel = np.abs(phase_to_depth(phase, cfg) - d) / d
        info["detail"] = f"max relative error {rel.max():.2e} (tol 1e-6)"
        assert rel.max() < 1e-6


def test_c2_variance_oracle():
    with criterion(2, "variance map equals brute-force sum on 50 frames", 5.0) as info:
        worst = 0.0
        for seed in range(50):
            rng = np.random.default_rng([seed, 2])
            depth = rng.uniform(0.5, 2.0, (16, 16))
            valid = rng.random((16, 16)) > 0.15
            window = (3, 5, 7)[seed % 3]
            vm = variance_map(DepthFrame(depth, valid), window)
            ref, ok = variance_brute(depth, valid, window, default_sigma(window))
            assert np.array_equal(vm.valid, ok)
            worst = max(worst, float(np.max(np.abs(vm.values - ref))))
        info["detail"] = f"max abs diff {worst:.2e} (tol 1e-12)"
        assert worst < 1e-12


def test_c3_noise_separability():
    with criterion(3, "rough vs smooth variance ratio and separability", 10.0) as info:
        cfg = load_config()
        groups = [(int(Region.FACE),), tuple(int(r) for r in HAIR_REGIONS)]
        dh, dw = cfg.depth_grid
        ratios, seps = [], []
        for i, sub in enumerate(cfg.subjects):
            head = replace(cfg.head, view=sub["view"])
            scene = render_head(dh, dw, cfg.camera.depth, head)
            _, depth = simulate_frame(scene.scene_spec(cfg.tof, head, cfg.subject_seed(i)), cfg.tof)
            mask = RegionMask(scene.labels)
            vmap = restricted_variance(depth, mask, groups)
            smooth = vmap.values[mask.select(groups[0]) & vmap.valid]
            rough = vmap.values[mask.select(groups[1]) & vmap.valid]
            ratios.append(rough.mean() / smooth.mean())
            edges = shared_bin_edges(vmap, mask, groups, bins=64)
            a = region_histogram(vmap, mask, groups[0], bin_edges=edges)
            b = region_histogram(vmap, mask, groups[1], bin_edges=edges)
            seps.append(separability(a, b))
        info["detail"] = (
            f"ratios {', '.join(f'{r:.2f}' for r in ratios)} (min 5); "
            f"Bhattacharyya {', '.join(f'{s:.3f}' for s in seps)} (min 0.5)"
        )
        assert min(ratios) >= 5.0 and min(seps) >= 0.5


def test_c4_gibbs_oracle():
    with criterion(4, "Gibbs energy equals brute force on 100 instances", 5.0) as info:
        worst = 0.0
        for seed in range(100):
            rng = np.random.default_rng([seed, 4])
            h, w = rng.integers(1, 6, size=2)
            unary, feats, rgb, extra, params = _random_crf(seed, h, w)
            x = rng.integers(0, 3, (h, w))
            ref = gibbs_brute(x, unary.values, rgb, extra, (
                params.w1, params.w2, params.theta_alpha, params.theta_beta, params.theta_gamma, params.theta_delta
            ))
            worst = max(worst, abs(gibbs_energy(x, unary, feats, params) - ref))
        info["detail"] = f"max abs diff {worst:.2e} (tol 1e-10)"
        assert worst < 1e-10


def test_c5_degenerate_identity():
    with criterion(5, "zero pairwise weights reproduce unary argmax") as info:
        cases = 0
        for seed in range(100):
            unary, feats, *_ = _random_crf(seed, 5, 5)
            for method in ("exact", "window"):
                q = mean_field_infer(unary, feats, IDENTITY, method=method)
                assert np.array_equal(map_labeling(q), unary.argmax())
                cases += 1
        for seed in range(20):
            inst = two_region_instance(seed).instance
            assert np.array_equal(refine(inst, IDENTITY), inst.unary.argmax())
            cases += 1
        info["detail"] = f"{cases} instances identical"


def test_c6_smoothing():
    with criterion(6, "flipped pixels restored on 20 two-region instances", 30.0) as info:
        restored = total = 0
        gains = []
        for seed in range(20):
            fi = two_region_instance(seed)
            inst = fi.instance
            pred = refine(inst, FLIP_PARAMS)
            restored += int(np.sum(pred[fi.flipped] == inst.truth[fi.flipped]))
            total += int(fi.flipped.sum())
            gains.append(hair_score(pred, inst) - hair_score(inst.unary.argmax(), inst))
        frac = restored / total
        info["detail"] = f"restored {frac:.4f} (min 0.99); min hair IoU gain {min(gains):+.4f} (> 0)"
        assert frac >= 0.99 and min(gains) > 0


def test_c7_extra_feature_benefit():
    with criterion(7, "HVA extra feature beats color-only on camouflage corpus", 120.0) as info:
        val = [camouflage_instance(s) for s in range(100, 106)]
        test = [camouflage_instance(s) for s in range(20)]
        base = CrfParams(w2=1.0, theta_delta=1.0)
        color_grid = {"w1": [1.0, 3.0, 5.0], "theta_alpha": [2.0, 4.0], "theta_beta": [5.0, 10.0, 20.0]}
        hva_grid = {**color_grid, "theta_gamma": [0.5, 1.0]}
        jobs = min(4, os.cpu_count() or 1)
        best_hva = grid_search_params([v[0] for v in val], hva_grid, base=base, jobs=jobs).best
        best_color = grid_search_params([v[1] for v in val], color_grid, base=base, jobs=jobs).best
        with_hva = np.mean([hair_score(refine(t[0], best_hva), t[0]) for t in test])
        color_only = np.mean([hair_score(refine(t[1], best_color), t[1]) for t in test])
        info["detail"] = f"hair IoU HVA {with_hva:.4f} vs color-only {color_only:.4f}, margin {with_hva - color_only:+.4f} (min 0.05)"
        assert with_hva >= color_only + 0.05


def test_c8_window_filter():
    with criterion(8, "window filter within 5e-2 of exact on 10 instances of 32x32") as info:
        worst = 0.0
        for seed in range(10):
            unary, feats, _, _, params = _random_crf(seed, 32, 32)
            exact = mean_field_infer(unary, feats, params, method="exact")
            window = mean_field_infer(unary, feats, params, method="window")
            worst = max(worst, float(np.max(np.abs(exact - window))))
        info["detail"] = f"max marginal diff {worst:.2e} (tol 5e-2)"
        assert worst < 5e-2


def test_c9_metrics():
    with criterion(9, "IoU and mIoU match brute-force counting") as info:
        worst = 0.0
        for seed in range(100):
            rng = np.random.default_rng([seed, 9])
            pred, gt = rng.integers(0, 4, (2, 8, 8))
            for lab in range(4):
                worst = max(worst, abs(iou(pred, gt, lab) - iou_brute(pred, gt, lab)))
            ref = np.mean([iou_brute(pred, gt, lab) for lab in range(4)])
            worst = max(worst, abs(miou(pred, gt, range(4)) - ref))
        x = np.array([[0, 1], [1, 2]])
        assert iou(x, x, 1) == 1.0 and miou(x, x, [0, 1, 2]) == 1.0
        assert iou(np.array([[1, 0]]), np.array([[0, 1]]), 1) == 0.0
        info["detail"] = f"max abs diff {worst:.2e} (tol 1e-12); identical 1.0; disjoint 0.0"
        assert worst < 1e-12


STAGES = ["simulate", "analyze", "features", "refine", "gridsearch", "eval"]


def _pipeline(out: Path, jobs: int) -> dict[str, str]:
    for stage in STAGES:
        subprocess.run(
            [sys.executable, "-m", "tofhair", stage, "--out", str(out), "--jobs", str(jobs)],
            check=True,
            capture_output=True,
        )
    return {
        str(p.relative_to(out)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(out.rglob("*"))
        if p.is_file()
    }


def test_c10_determinism(tmp_path):
    with criterion(10, "CLI outputs byte-identical across runs and job counts") as info:
        first = _pipeline(tmp_path / "a", jobs=1)
        second = _pipeline(tmp_path / "b", jobs=1)
        parallel = _pipeline(tmp_path / "c", jobs=8)
        differ = sorted(k for k in first if first[k] != second.get(k) or first[k] != parallel.get(k))
        info["detail"] = f"{len(first)} files compared, {len(differ)} differ"
        assert first.keys() == second.keys() == parallel.keys()
        assert not differ, differ
