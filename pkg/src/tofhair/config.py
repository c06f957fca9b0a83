"""Pipeline configuration loaded from JSON."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np

from tofhair.crf import PRESETS, CrfParams
from tofhair.errors import ConfigError, TofHairError
from tofhair.geomfeat import CameraModel, Intrinsics
from tofhair.synth import EXTRA_FEATURES, HeadConfig
from tofhair.tofsim import ToFConfig

SHIPPED_CONFIG = "synthetic.json"


def shipped_config_path() -> Path:
    return Path(str(resources.files("tofhair") / "data" / SHIPPED_CONFIG))


@dataclass
class PipelineConfig:
    raw: dict
    seed: int
    tof: ToFConfig
    camera: CameraModel
    depth_grid: tuple[int, int]
    rgb_grid: tuple[int, int]
    head: HeadConfig
    subjects: list
    unary: dict
    analyze: dict
    features: dict
    refine: dict
    gridsearch: dict
    size_cap: int
    source: Path | None = None

    def crf_params(self, override: dict | None = None) -> CrfParams:
        spec = override if override is not None else self.refine.get("params", "experiments")
        if isinstance(spec, str):
            if spec not in PRESETS:
                raise ConfigError(f"unknown CRF preset {spec!r}; choose from {sorted(PRESETS)}")
            return PRESETS[spec]
        return _build(CrfParams, spec, "refine.params")

    @property
    def extra_feature(self) -> str:
        return self.refine.get("extra", "hva")

    def subject_seed(self, index: int) -> int:
        return int(np.random.SeedSequence([self.seed, index]).generate_state(1)[0])


def _build(cls, values: dict, where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**values)
    except (TofHairError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _intrinsics(section: dict, where: str) -> tuple[tuple[int, int], Intrinsics]:
    try:
        w, h = int(section["width"]), int(section["height"])
        focal = float(section.get("fx", 500.0))
        intr = Intrinsics(
            focal,
            float(section.get("fy", focal)),
            float(section.get("cx", (w - 1) / 2.0)),
            float(section.get("cy", (h - 1) / 2.0)),
        )
    except KeyError as exc:
        raise ConfigError(f"{where}: missing {exc}") from exc
    except TofHairError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    return (h, w), intr


def parse_config(raw: dict, source: Path | None = None, seed: int | None = None) -> PipelineConfig:
    raw = copy.deepcopy(raw)
    tof = _build(ToFConfig, raw.get("tof", {}), "tof")
    cam_raw = raw.get("camera", {})
    depth_grid, depth_intr = _intrinsics(cam_raw.get("depth", {"width": 40, "height": 40}), "camera.depth")
    rgb_grid, rgb_intr = _intrinsics(cam_raw.get("rgb", {"width": 48, "height": 48}), "camera.rgb")
    try:
        camera = CameraModel(
            rgb=rgb_intr,
            depth=depth_intr,
            rotation=np.asarray(cam_raw.get("rotation", np.eye(3).tolist()), dtype=float),
            translation=np.asarray(cam_raw.get("translation", [0.0, 0.0, 0.0]), dtype=float),
            baseline=float(cam_raw.get("baseline", 0.05)),
            focal=float(cam_raw.get("focal", rgb_intr.fx)),
            gravity=np.asarray(cam_raw.get("gravity", [0.0, -1.0, 0.0]), dtype=float),
        )
    except TofHairError as exc:
        raise ConfigError(f"camera: {exc}") from exc

    scene = raw.get("scene", {})
    head = _build(HeadConfig, scene.get("head", {}), "scene.head")
    subjects = scene.get("subjects", [{"id": "s00", "view": "front"}])
    if not subjects:
        raise ConfigError("scene.subjects is empty")
    ids = [s.get("id") for s in subjects]
    if any(not isinstance(i, str) or not i for i in ids) or len(set(ids)) != len(ids):
        raise ConfigError("every subject needs a unique string id")
    for s in subjects:
        if s.get("view", "front") not in ("front", "back"):
            raise ConfigError(f"subject {s['id']}: view must be 'front' or 'back'")

    refine = raw.get("refine", {})
    extra = refine.get("extra", "hva")
    if extra not in EXTRA_FEATURES and extra != "none":
        raise ConfigError(f"refine.extra must be one of {EXTRA_FEATURES} or 'none', got {extra!r}")

    cfg = PipelineConfig(
        raw=raw,
        seed=int(seed if seed is not None else raw.get("seed", 0)),
        tof=tof,
        camera=camera,
        depth_grid=depth_grid,
        rgb_grid=rgb_grid,
        head=head,
        subjects=subjects,
        unary=raw.get("unary", {}),
        analyze=raw.get("analyze", {}),
        features=raw.get("features", {}),
        refine=refine,
        gridsearch=raw.get("gridsearch", {}),
        size_cap=int(raw.get("size_cap", 64 * 64)),
        source=source,
    )
    cfg.crf_params()
    return cfg


def load_config(path=None, seed: int | None = None) -> PipelineConfig:
    path = Path(path) if path is not None else shipped_config_path()
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(raw, path, seed)
