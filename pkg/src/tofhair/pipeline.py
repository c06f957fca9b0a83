"""Batch commands over the on-disk dataset.

Layout under the output directory::

    index.json
    <subject>/rgb/rgb.png
    <subject>/depth/{depth.pfm, valid.pgm, four_phase.pfm, four_phase.json}
    <subject>/mask/{regions.pgm, regions_depth.pgm}
    <subject>/direction/direction.png
    <subject>/unary/{unary.pfm, unary.json}
    <subject>/manifest.json
    <subject>/analysis/...      (analyze)
    <subject>/features/...      (features)
    <subject>/refined/...       (refine)
    <subject>/eval/...          (eval)
    analysis_summary.csv, gridsearch/, eval_summary.{json,csv}

Region masks hold ``Region`` ids, direction maps hold ``DirectionClass`` ids
(255 outside hair). Each subject is processed independently; ``jobs`` threads
share the subjects and every file is written atomically.
"""

from __future__ import annotations

import io as _io
import itertools
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from tofhair import io
from tofhair.config import PipelineConfig
from tofhair.crf import (
    MERGED_LABELS,
    SIX_CLASS_LABELS,
    CrfParams,
    FeatureField,
    Instance,
    UnaryField,
    gibbs_energy,
    grid_search_params,
    map_labeling,
    mean_field_infer,
    merge_hair_labels,
)
from tofhair.errors import DataError, InvalidArgumentError
from tofhair.geomfeat import (
    build_hva,
    direction_map,
    fill_holes,
    register_depth_to_rgb,
    sobel_gradients,
)
from tofhair.metrics import evaluate
from tofhair.noisemap import (
    HAIR_REGIONS,
    REGION_NAMES,
    Region,
    RegionMask,
    fit_gaussian,
    multiscale_variance,
    region_histogram,
    restricted_variance,
    separability,
    shared_bin_edges,
)
from tofhair.synth import merge_truth, render_head, synthetic_unary
from tofhair.tofsim import ROUGH, SMOOTH, DepthFrame, simulate_frame

INDEX = "index.json"
_PLOT_LOCK = threading.Lock()
DEFAULT_REGIONS = {"face": [int(Region.FACE)], "hair": [int(r) for r in HAIR_REGIONS]}


def _map(jobs: int, fn, items):
    items = list(items)
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _subjects(cfg: PipelineConfig):
    return [(i, s["id"], s.get("view", "front")) for i, s in enumerate(cfg.subjects)]


def _require(path: Path) -> Path:
    if not path.exists():
        raise DataError(f"missing input {path}; run the earlier pipeline stage first")
    return path


def _load_depth(sub: Path) -> DepthFrame:
    depth = io.read_pfm(_require(sub / "depth" / "depth.pfm"))
    valid = io.read_mask(_require(sub / "depth" / "valid.pgm"))
    return DepthFrame(np.where(valid, depth, 0.0), valid)


def _load_unary(sub: Path, merge: bool) -> UnaryField:
    probs, meta = io.read_planes(_require(sub / "unary" / "unary.pfm"))
    # PFM stores float32; renormalize before building the field
    probs = np.clip(probs, 0.0, None)
    probs /= probs.sum(axis=0, keepdims=True)
    unary = UnaryField.from_probabilities(tuple(meta["labels"]), probs)
    if merge and tuple(unary.labels) == SIX_CLASS_LABELS:
        unary = merge_hair_labels(unary)
    return unary


def _truth(sub: Path, labels) -> np.ndarray:
    regions = io.read_pgm(_require(sub / "mask" / "regions.pgm"))
    if tuple(labels) == MERGED_LABELS:
        return merge_truth(regions)
    return regions.astype(np.int64)


# -- simulate ---------------------------------------------------------------


def cmd_simulate(cfg: PipelineConfig, out, jobs: int = 1) -> list[Path]:
    out = Path(out)
    (dh, dw), (rh, rw) = cfg.depth_grid, cfg.rgb_grid
    unary_cfg = {"strength": 1.5, "noise": 0.5, "flip_rate": 0.05, **cfg.unary}

    def one(item):
        i, sid, view = item
        seed = cfg.subject_seed(i)
        head = replace(cfg.head, view=view)
        sub = out / sid
        on_depth = render_head(dh, dw, cfg.camera.depth, head)
        on_rgb = render_head(rh, rw, cfg.camera.rgb, head)
        spec = on_depth.scene_spec(cfg.tof, head, seed)
        frame, depth = simulate_frame(spec, cfg.tof)

        io.write_pfm(sub / "depth" / "depth.pfm", depth.depth)
        io.write_mask(sub / "depth" / "valid.pgm", depth.valid)
        io.write_planes(sub / "depth" / "four_phase.pfm", frame.stack(), {"samples": ["a1", "a2", "a3", "a4"]})
        io.write_pgm(sub / "mask" / "regions_depth.pgm", on_depth.labels)
        io.write_pgm(sub / "mask" / "regions.pgm", on_rgb.labels)
        io.write_png(sub / "rgb" / "rgb.png", on_rgb.rgb)
        io.write_png(sub / "direction" / "direction.png", on_rgb.direction)

        rng = np.random.default_rng([seed, 7])
        probs, flipped = synthetic_unary(on_rgb.labels.astype(np.int64), len(SIX_CLASS_LABELS), rng, **unary_cfg)
        io.write_planes(sub / "unary" / "unary.pfm", probs, {"labels": list(SIX_CLASS_LABELS)})

        material = spec.material
        manifest = {
            "id": sid,
            "view": view,
            "seed": seed,
            "depth_shape": [dh, dw],
            "rgb_shape": [rh, rw],
            "materials": {
                "smooth": int(np.count_nonzero(material == SMOOTH)),
                "rough": int(np.count_nonzero(material == ROUGH)),
            },
            "regions": {REGION_NAMES[r]: int(np.count_nonzero(on_rgb.labels == r)) for r in Region},
            "unary_flipped": int(np.count_nonzero(flipped)),
            "invalid_depth": int(np.count_nonzero(~depth.valid)),
        }
        io.write_json(sub / "manifest.json", manifest)
        return sub

    subs = _map(jobs, one, _subjects(cfg))
    index = {
        "seed": cfg.seed,
        "config": cfg.raw,
        "subjects": [{"id": sid, "view": view, "path": sid} for _, sid, view in _subjects(cfg)],
    }
    io.write_json(out / INDEX, index)
    return subs


# -- analyze ----------------------------------------------------------------


def _histogram_plot(curves, path: Path):
    import matplotlib
    from matplotlib.figure import Figure

    # rc_context is process-global, so plots are drawn one at a time
    with _PLOT_LOCK, matplotlib.rc_context({"svg.hashsalt": "tofhair", "svg.fonttype": "none"}):
        fig = Figure(figsize=(5, 3.2))
        ax = fig.subplots()
        for curve in curves:
            centers = 0.5 * (curve.bin_edges[:-1] + curve.bin_edges[1:])
            ax.plot(centers, curve.normalized(), label=curve.label)
        ax.set_xlabel("depth variance")
        ax.set_ylabel("fraction of pixels")
        ax.legend()
        fig.tight_layout()
        buf = _io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
    io.atomic_write(path, buf.getvalue())


def cmd_analyze(cfg: PipelineConfig, out, jobs: int = 1) -> list[dict]:
    out = Path(out)
    opts = cfg.analyze
    bins = int(opts.get("bins", 64))
    groups = {k: tuple(v) for k, v in opts.get("regions", DEFAULT_REGIONS).items()}
    if len(groups) < 1:
        raise InvalidArgumentError("analyze.regions is empty")

    def one(item):
        _, sid, _ = item
        sub = out / sid
        depth = _load_depth(sub)
        mask = RegionMask(io.read_pgm(_require(sub / "mask" / "regions_depth.pgm")))
        restrict = opts.get("restrict", "region")
        if restrict == "region":
            vmap = restricted_variance(depth, mask, list(groups.values()))
        elif restrict == "human":
            vmap = multiscale_variance(DepthFrame(depth.depth, depth.valid & (mask.labels != Region.BACKGROUND)))
        elif restrict == "none":
            vmap = multiscale_variance(depth)
        else:
            raise InvalidArgumentError(f"analyze.restrict must be region, human or none, got {restrict!r}")
        dst = sub / "analysis"
        io.write_pfm(dst / "variance.pfm", np.where(vmap.valid, vmap.values, 0.0))
        io.write_mask(dst / "variance_valid.pgm", vmap.valid)

        curves_spec = dict(groups)
        if opts.get("per_part", True):
            for r in HAIR_REGIONS:
                if np.any(mask.select([r]) & vmap.valid):
                    curves_spec[REGION_NAMES[r]] = (int(r),)
        edges = shared_bin_edges(vmap, mask, list(curves_spec.values()), bins)
        curves = [region_histogram(vmap, mask, regs, bin_edges=edges, label=name) for name, regs in curves_spec.items()]

        io.write_csv(
            dst / "histograms.csv",
            ["bin_low", "bin_high", *[c.label for c in curves]],
            ([edges[k], edges[k + 1], *[int(c.counts[k]) for c in curves]] for k in range(bins)),
        )
        stats = {}
        for name, regs in curves_spec.items():
            vals = vmap.values[mask.select(regs) & vmap.valid]
            fit = fit_gaussian(vals) if vals.size >= 2 else None
            stats[name] = {
                "regions": list(regs),
                "pixels": int(vals.size),
                "mean_variance": float(vals.mean()),
                "gaussian_mean": fit.mean if fit else None,
                "gaussian_std": fit.std if fit else None,
                "gaussian_residual": fit.residual if fit else None,
            }
        pairs = [(a.label, b.label, separability(a, b)) for a, b in itertools.combinations(curves, 2)]
        io.write_csv(dst / "separability.csv", ["region_a", "region_b", "bhattacharyya"], pairs)
        summary = {
            "bin_edges": [float(e) for e in edges],
            "histograms": {c.label: [int(n) for n in c.counts] for c in curves},
            "stats": stats,
            "separability": [{"a": a, "b": b, "bhattacharyya": d if math.isfinite(d) else "inf"} for a, b, d in pairs],
        }
        io.write_json(dst / "histograms.json", summary)
        if opts.get("plots", True):
            _histogram_plot(curves, dst / "histograms.svg")
        return {"id": sid, "stats": stats, "pairs": pairs}

    results = _map(jobs, one, _subjects(cfg))
    names = list(groups)
    rows = []
    for res in results:
        row = [res["id"], *[res["stats"][n]["mean_variance"] for n in names]]
        seps = {(a, b): d for a, b, d in res["pairs"]}
        row += [seps[(a, b)] for a, b in itertools.combinations(names, 2)]
        rows.append(row)
    header = ["subject", *[f"mean_variance_{n}" for n in names]]
    header += [f"bhattacharyya_{a}_{b}" for a, b in itertools.combinations(names, 2)]
    io.write_csv(out / "analysis_summary.csv", header, rows)
    return results


# -- features ---------------------------------------------------------------


def _feature_mask(cfg: PipelineConfig, sub: Path) -> RegionMask:
    source = cfg.features.get("mask_source", "unary")
    if source == "truth":
        return RegionMask(io.read_pgm(_require(sub / "mask" / "regions.pgm")))
    if source != "unary":
        raise InvalidArgumentError(f"features.mask_source must be 'unary' or 'truth', got {source!r}")
    unary = _load_unary(sub, merge=False)
    return RegionMask(unary.argmax().astype(np.uint8))


def cmd_features(cfg: PipelineConfig, out, jobs: int = 1) -> list[Path]:
    out = Path(out)
    sigma = float(cfg.features.get("fill_sigma", 1.5))

    def one(item):
        _, sid, _ = item
        sub = out / sid
        rgb = io.read_png(_require(sub / "rgb" / "rgb.png"))
        mask = _feature_mask(cfg, sub)
        registered = register_depth_to_rgb(_load_depth(sub), cfg.camera, cfg.rgb_grid)
        filled = fill_holes(registered, mask, sigma)
        hva = build_hva(filled, cfg.camera, multiscale_variance(filled))
        grad = sobel_gradients(rgb)
        hair = mask.select(HAIR_REGIONS)
        est = direction_map(grad, hair)

        dst = sub / "features"
        io.write_pfm(dst / "registered_depth.pfm", filled.depth)
        io.write_mask(dst / "registered_valid.pgm", filled.valid)
        io.write_planes(dst / "hva.pfm", np.moveaxis(hva.stack(), -1, 0), {"channels": ["h", "v", "a"]})
        io.write_planes(dst / "gradients.pfm", np.stack([grad.gx, grad.gy]), {"channels": ["gx", "gy"]})
        io.write_png(dst / "direction.png", est)

        truth_dir = io.read_png(_require(sub / "direction" / "direction.png"))
        both = (est != 255) & (truth_dir != 255)
        agree = float(np.mean(est[both] == truth_dir[both])) if both.any() else None
        io.write_json(
            dst / "summary.json",
            {
                "registered_holes": int(np.count_nonzero(~registered.valid)),
                "filled_holes": int(np.count_nonzero(filled.valid & ~registered.valid)),
                "hva_nan": {k: int(np.count_nonzero(np.isnan(getattr(hva, k)))) for k in ("h", "v", "a")},
                "direction_pixels": int(np.count_nonzero(est != 255)),
                "direction_agreement": agree,
                "mask_source": cfg.features.get("mask_source", "unary"),
            },
        )
        return dst

    return _map(jobs, one, _subjects(cfg))


# -- refine -----------------------------------------------------------------

_EXTRA_CHANNELS = {"disparity": [0], "variance": [1], "normal": [2], "hva": [0, 1, 2]}


def _extra_planes(sub: Path, kind: str):
    if kind == "none":
        return None
    if kind == "tof":
        depth = io.read_pfm(_require(sub / "features" / "registered_depth.pfm"))
        valid = io.read_mask(_require(sub / "features" / "registered_valid.pgm"))
        return np.where(valid, depth, np.nan)[..., None]
    planes, _ = io.read_planes(_require(sub / "features" / "hva.pfm"))
    return np.moveaxis(planes[_EXTRA_CHANNELS[kind]], 0, -1)


def _instance(cfg: PipelineConfig, sub: Path, extra: str | None = None) -> Instance:
    unary = _load_unary(sub, merge=cfg.refine.get("merge_hair", True))
    rgb = io.read_png(_require(sub / "rgb" / "rgb.png"))
    feats = FeatureField.from_image(rgb, _extra_planes(sub, extra or cfg.extra_feature))
    return Instance(unary, feats, _truth(sub, unary.labels))


def cmd_refine(cfg: PipelineConfig, out, jobs: int = 1, params: CrfParams | None = None) -> list[dict]:
    out = Path(out)
    params = params or cfg.crf_params()
    iterations = int(cfg.refine.get("iterations", 10))
    method = cfg.refine.get("method", "auto")

    def one(item):
        _, sid, _ = item
        sub = out / sid
        inst = _instance(cfg, sub)
        q = mean_field_infer(inst.unary, inst.features, params, iterations, method=method)
        labels = map_labeling(q)
        dst = sub / "refined"
        io.write_pgm(dst / "labels.pgm", labels)
        io.write_planes(dst / "marginals.pfm", q, {"labels": list(inst.unary.labels)})
        n = inst.features.size
        log = {
            "labels": list(inst.unary.labels),
            "params": params.as_dict(),
            "iterations": iterations,
            "method": method,
            "extra": cfg.extra_feature,
            "pixels": n,
            "size_cap": cfg.size_cap,
        }
        if n <= cfg.size_cap:
            log["energy_unary_argmax"] = gibbs_energy(inst.unary.argmax(), inst.unary, inst.features, params, cfg.size_cap)
            log["energy_refined"] = gibbs_energy(labels, inst.unary, inst.features, params, cfg.size_cap)
        else:
            log["energy_skipped"] = f"{n} pixels exceeds size cap {cfg.size_cap}"
        io.write_json(dst / "energy.json", log)
        return log

    return _map(jobs, one, _subjects(cfg))


# -- gridsearch -------------------------------------------------------------


def cmd_gridsearch(cfg: PipelineConfig, out, jobs: int = 1):
    out = Path(out)
    spec = cfg.gridsearch
    grid = spec.get("grid") or {"w1": [1.0, 3.0], "theta_alpha": [2.0, 4.0], "theta_gamma": [0.3, 0.7]}
    base_raw = spec.get("base")
    base = cfg.crf_params(base_raw) if base_raw is not None else cfg.crf_params()
    insts = [_instance(cfg, out / sid) for _, sid, _ in _subjects(cfg)]
    result = grid_search_params(
        insts,
        grid,
        base=base,
        iterations=int(cfg.refine.get("iterations", 10)),
        method=cfg.refine.get("method", "auto"),
        jobs=jobs,
    )
    dst = out / "gridsearch"
    io.write_json(
        dst / "best_params.json",
        {"params": result.best.as_dict(), "mean_hair_iou": result.best_score, "extra": cfg.extra_feature},
    )
    fields = list(CrfParams.__dataclass_fields__)
    io.write_csv(
        dst / "scores.csv",
        [*fields, "mean_hair_iou"],
        ([getattr(p, f) for f in fields] + [s] for p, s in result.table),
    )
    return result


# -- eval -------------------------------------------------------------------


def cmd_eval(cfg: PipelineConfig, out, jobs: int = 1) -> dict:
    out = Path(out)

    def one(item):
        _, sid, _ = item
        sub = out / sid
        unary = _load_unary(sub, merge=cfg.refine.get("merge_hair", True))
        truth = _truth(sub, unary.labels)
        refined = io.read_pgm(_require(sub / "refined" / "labels.pgm")).astype(np.int64)
        labels = list(range(unary.num_labels))
        reports = {
            "refined": evaluate(refined, truth, labels, unary.labels),
            "unary": evaluate(unary.argmax(), truth, labels, unary.labels),
        }
        for name, rep in reports.items():
            io.write_text(sub / "eval" / f"{name}.json", rep.to_json())
            io.write_text(sub / "eval" / f"{name}.csv", rep.to_csv())
        return sid, {k: r.as_dict() for k, r in reports.items()}

    results = dict(_map(jobs, one, _subjects(cfg)))
    rows, summary = [], {"subjects": {}}
    for sid, reps in results.items():
        entry = {}
        for kind, rep in reps.items():
            per = {p["name"]: p["iou"] for p in rep["per_label"]}
            entry[kind] = {"miou": rep["miou"], **{f"iou_{k}": v for k, v in per.items()}}
            rows.append([sid, kind, rep["miou"], per.get("hair", float("nan"))])
        summary["subjects"][sid] = entry
    for kind in ("unary", "refined"):
        summary[f"mean_miou_{kind}"] = float(np.mean([r[2] for r in rows if r[1] == kind]))
        summary[f"mean_hair_iou_{kind}"] = float(np.mean([r[3] for r in rows if r[1] == kind]))
    io.write_json(out / "eval_summary.json", summary)
    io.write_csv(out / "eval_summary.csv", ["subject", "prediction", "miou", "hair_iou"], rows)
    return summary


COMMANDS = {
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "features": cmd_features,
    "refine": cmd_refine,
    "gridsearch": cmd_gridsearch,
    "eval": cmd_eval,
}
