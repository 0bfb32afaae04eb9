"""Deterministic batch drivers behind the command-line tool.

Every item's randomness comes from a seed hashed from (global seed, relative
input path, repetition), so outputs never depend on worker count or order.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from functools import partial
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from . import __version__
from .atmosphere import AtmosphereParams, RenderPreset, draw_params, get_preset, render
from .metrics import DEFAULT_K, DEFAULT_THRESHOLD, contrast_map_raster, residual_contrast_gain
from .procedural import DensityParams, density_field
from .raster import Raster, encode_png, load_depth, load_png, resize_to, save_png
from .seeding import child, stable_hash
from .supervision import MaskSpec, SupervisionSpec, compose_target, draw_strength, soft_mask, synth_occlusion

log = logging.getLogger(__name__)

DEPTH_EXTENSIONS = (".png", ".pfm")


class BatchAbort(RuntimeError):
    """The batch cannot continue, e.g. the output tree is not writable."""


class ItemError(RuntimeError):
    pass


class WriteError(RuntimeError):
    pass


# --- config -----------------------------------------------------------------


@dataclass(frozen=True)
class SupervisionConfig:
    direction: str = "remove"
    mask: MaskSpec = MaskSpec()
    p_full_strength: float = 0.5

    @classmethod
    def from_dict(cls, d: dict) -> "SupervisionConfig":
        d = dict(d)
        if "mask" in d:
            d["mask"] = MaskSpec.from_dict(d["mask"])
        return cls(**d)

    def to_dict(self) -> dict:
        return {"direction": self.direction, "mask": self.mask.to_dict(), "p_full_strength": self.p_full_strength}


@dataclass(frozen=True)
class BatchConfig:
    input_dir: Path
    depth_dir: Path
    output_dir: Path
    preset: str | RenderPreset | AtmosphereParams = "haze"
    density: Optional[DensityParams] = None  # None = homogeneous medium
    count_per_image: int = 1
    global_seed: int = 0
    workers: int = 1
    supervision: Optional[SupervisionConfig] = None
    depth_suffix: str = ""
    dump_density: bool = False

    def __post_init__(self):
        if self.count_per_image < 1:
            raise ValueError("count_per_image must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if isinstance(self.preset, str):
            get_preset(self.preset)

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path = Path(".")) -> "BatchConfig":
        d = dict(d)
        for key in ("input_dir", "depth_dir", "output_dir"):
            if key not in d:
                raise ValueError(f"config is missing {key!r}")
            d[key] = (base_dir / d[key]).resolve()
        preset = d.get("preset", "haze")
        if isinstance(preset, dict):
            preset = AtmosphereParams.from_dict(preset["params"]) if "params" in preset else RenderPreset.from_dict(preset)
        d["preset"] = preset
        density = d.get("density") or {"mode": "homogeneous"}
        if isinstance(density, str):
            density = {"mode": density}
        density = dict(density)
        mode = density.pop("mode", "procedural")
        if mode == "homogeneous":
            d["density"] = None
        elif mode == "procedural":
            d["density"] = DensityParams(**density)
        else:
            raise ValueError(f"unknown density mode {mode!r}")
        if d.get("supervision") is not None:
            d["supervision"] = SupervisionConfig.from_dict(d["supervision"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "BatchConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), path.parent)


def preset_record(preset) -> Any:
    if isinstance(preset, str):
        return preset
    if isinstance(preset, RenderPreset):
        return preset.to_dict()
    return {"params": preset.to_dict()}


# --- helpers ------------------------------------------------------------------


def list_pngs(root: Path) -> list[str]:
    """Relative POSIX paths of all PNGs under ``root``, sorted."""
    root = Path(root)
    if not root.is_dir():
        raise BatchAbort(f"not a directory: {root}")
    return sorted(p.relative_to(root).as_posix() for p in root.rglob("*.png") if p.is_file())


def _stem_key(rel: str) -> str:
    return rel[: -len(Path(rel).suffix)] if Path(rel).suffix else rel


def match_pairs(dir_a: Path, dir_b: Path) -> tuple[list[tuple[str, str]], list[str]]:
    """Pair files in two trees by relative path without extension.

    Returns matched (rel_a, rel_b) pairs and the unmatched keys.
    """
    a = {_stem_key(r): r for r in list_pngs(dir_a)}
    b = {_stem_key(r): r for r in list_pngs(dir_b)}
    pairs = [(a[k], b[k]) for k in sorted(a.keys() & b.keys())]
    unmatched = sorted(a.keys() ^ b.keys())
    return pairs, unmatched


def atomic_write(path: Path, data: bytes):
    """Write via a temp file and rename, so readers never see a partial file."""
    tmp = None
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except OSError as e:
        if tmp is not None and os.path.exists(tmp):
            os.unlink(tmp)
        raise WriteError(f"cannot write {path}: {e}") from e


def write_png(img, path: Path, bits: int = 8):
    atomic_write(path, encode_png(img, bits))


def write_json(obj, path: Path):
    atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def _mtime(path: Optional[Path]) -> Optional[str]:
    if path is None:
        return None
    ts = path.stat().st_mtime
    return datetime.fromtimestamp(ts, tz=timezone.utc).isoformat()


def ensure_writable(out: Path):
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as e:
        raise BatchAbort(f"output directory is not writable: {out} ({e})") from e


def run_pool(fn: Callable, items: Sequence, workers: int) -> list:
    """Map ``fn`` over ``items`` on a process pool, returning results in item order."""
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=1))


def _finish(out: Path, results: list[dict], extra: Optional[dict] = None) -> dict:
    aborts = [r for r in results if r.get("abort")]
    if aborts:
        raise BatchAbort(aborts[0]["error"])
    failed = [{"item": r["item"], "error": r["error"]} for r in results if not r["ok"]]
    report = {"items": len(results), "succeeded": len(results) - len(failed), "failed": failed}
    if extra:
        report.update(extra)
    write_json(report, out / "report.json")
    return report


def guarded(fn, item) -> dict:
    """Run one item, turning item-level errors into a failure record."""
    try:
        return {"item": item.name, "ok": True, **(fn(item) or {})}
    except WriteError as e:
        return {"item": item.name, "ok": False, "abort": True, "error": str(e)}
    except Exception as e:  # noqa: BLE001 - one bad item must not stop the batch
        return {"item": item.name, "ok": False, "error": f"{type(e).__name__}: {e}"}


# --- synth ----------------------------------------------------------------------


@dataclass(frozen=True)
class SynthItem:
    name: str
    rel: str
    repetition: int
    input_dir: Path
    depth_dir: Path
    out: Path
    preset: Any
    density: Optional[DensityParams]
    global_seed: int
    supervision: Optional[SupervisionConfig]
    depth_suffix: str
    dump_density: bool


def item_seed(global_seed: int, rel: str, repetition: int) -> int:
    return stable_hash(global_seed, rel, repetition)


def find_depth(depth_dir: Path, rel: str, suffix: str) -> Path:
    base = Path(_stem_key(rel) + suffix)
    for ext in DEPTH_EXTENSIONS:
        cand = depth_dir / base.with_name(base.name + ext)
        if cand.is_file():
            return cand
    raise ItemError(f"no depth map for {rel} (looked for {base}{{{','.join(DEPTH_EXTENSIONS)}}} in {depth_dir})")


def synth_params(preset, seed: int) -> AtmosphereParams:
    if isinstance(preset, AtmosphereParams):
        return preset
    if isinstance(preset, str):
        preset = get_preset(preset)
    return draw_params(preset, child(seed, 0))


def render_item(clean: Raster, depth, preset, density: Optional[DensityParams], seed: int):
    """Render one item from its seed; returns (degraded, params, density map)."""
    params = synth_params(preset, seed)
    m = None
    if density is not None:
        m = density_field(clean.width, clean.height, child(seed, 1), density)
    return render(clean, depth, params, m), params, m


def _synth_one(item: SynthItem) -> dict:
    src = item.input_dir / item.rel
    depth_path = find_depth(item.depth_dir, item.rel, item.depth_suffix)
    clean = load_png(src)
    if clean.channels != 3:
        raise ItemError(f"{item.rel} is not an RGB image")
    depth = load_depth(depth_path)
    if depth.shape != clean.shape:
        raise ItemError(f"depth {depth.shape} does not match image {clean.shape} for {item.rel}")
    seed = item_seed(item.global_seed, item.rel, item.repetition)
    degraded, params, m = render_item(clean, depth, item.preset, item.density, seed)

    key = f"{_stem_key(item.rel)}_r{item.repetition:03d}"
    meta = {
        "tool": "softfx",
        "version": __version__,
        "source": {
            "input_dir": str(item.input_dir),
            "depth_dir": str(item.depth_dir),
            "input": item.rel,
            "depth": depth_path.relative_to(item.depth_dir).as_posix(),
        },
        "repetition": item.repetition,
        "global_seed": item.global_seed,
        "item_seed": seed,
        "preset": preset_record(item.preset),
        "atmosphere": params.to_dict(),
        "density": {"mode": "homogeneous"} if item.density is None else {
            "mode": "procedural", "params": item.density.to_dict(), "seed_path": [seed, 1]},
        "timestamps": {"source_mtime": _mtime(src), "depth_mtime": _mtime(depth_path)},
    }
    outputs = {"degraded": f"degraded/{key}.png"}
    if item.supervision is not None:
        sup = item.supervision
        mask, mask_info = soft_mask(clean.width, clean.height, sup.mask, child(seed, 2))
        strength = draw_strength(np.random.default_rng(child(seed, 3)), sup.p_full_strength)
        target = compose_target(degraded, clean, SupervisionSpec(strength, mask, sup.direction))
        meta["supervision"] = {
            **sup.to_dict(), "strength": strength, "mask_seed_path": [seed, 2], **mask_info,
            "blend_space": "srgb",
        }
        outputs["target"] = f"target/{key}.png"
        outputs["mask"] = f"mask/{key}.png"
    meta["outputs"] = outputs
    if item.repetition == 0:
        atomic_write(item.out / "clean" / item.rel, src.read_bytes())
    write_png(degraded, item.out / outputs["degraded"])
    if item.supervision is not None:
        write_png(target, item.out / outputs["target"])
        write_png(mask, item.out / outputs["mask"])
    if item.dump_density and m is not None:
        write_png(m / max(item.density.m_hi, 1e-12), item.out / "density" / f"{key}.png", bits=16)
    write_json(meta, item.out / "meta" / f"{key}.json")
    return {"outputs": sorted(outputs.values())}


synth_one = partial(guarded, _synth_one)


def synth_items(cfg: BatchConfig) -> list[SynthItem]:
    rels = list_pngs(cfg.input_dir)
    preset = cfg.preset
    return [
        SynthItem(
            name=f"{rel}#{rep}", rel=rel, repetition=rep, input_dir=cfg.input_dir, depth_dir=cfg.depth_dir,
            out=cfg.output_dir, preset=preset, density=cfg.density, global_seed=cfg.global_seed,
            supervision=cfg.supervision, depth_suffix=cfg.depth_suffix, dump_density=cfg.dump_density,
        )
        for rel in rels
        for rep in range(cfg.count_per_image)
    ]


def cmd_synth(cfg: BatchConfig) -> dict:
    """Render every input ``count_per_image`` times; returns the batch report."""
    if not cfg.depth_dir.is_dir():
        raise BatchAbort(f"depth directory does not exist: {cfg.depth_dir}")
    ensure_writable(cfg.output_dir)
    items = synth_items(cfg)
    results = run_pool(synth_one, items, cfg.workers)
    return _finish(cfg.output_dir, results)


def regenerate(meta: dict) -> Raster:
    """Rebuild the degraded image described by a synth sidecar."""
    src = Path(meta["source"]["input_dir"]) / meta["source"]["input"]
    depth = load_depth(Path(meta["source"]["depth_dir"]) / meta["source"]["depth"])
    params = AtmosphereParams.from_dict(meta["atmosphere"])
    m = None
    if meta["density"]["mode"] == "procedural":
        seed, idx = meta["density"]["seed_path"]
        clean = load_png(src)
        m = density_field(clean.width, clean.height, child(seed, idx), DensityParams(**meta["density"]["params"]))
    return render(load_png(src), depth, params, m)


# --- supervise / occlude ------------------------------------------------------------


@dataclass(frozen=True)
class SuperviseItem:
    name: str
    input_path: Path
    gt_path: Path
    out: Path
    seed: int
    config: SupervisionConfig


def _supervise_one(item: SuperviseItem) -> dict:
    inp = load_png(item.input_path)
    gt = load_png(item.gt_path)
    if inp.data.shape != gt.data.shape:
        raise ItemError(f"input {inp.data.shape} and gt {gt.data.shape} differ for {item.name}")
    mask, info = soft_mask(inp.width, inp.height, item.config.mask, child(item.seed, 0))
    strength = draw_strength(np.random.default_rng(child(item.seed, 1)), item.config.p_full_strength)
    target = compose_target(inp, gt, SupervisionSpec(strength, mask, item.config.direction))
    write_png(target, item.out / "target" / f"{item.name}.png")
    write_png(mask, item.out / "mask" / f"{item.name}.png")
    write_json({
        "tool": "softfx", "version": __version__,
        "input": str(item.input_path), "gt": str(item.gt_path),
        "item_seed": item.seed, "strength": strength, **info, **item.config.to_dict(),
        "blend_space": "srgb",
        "timestamps": {"input_mtime": _mtime(item.input_path), "gt_mtime": _mtime(item.gt_path)},
    }, item.out / "meta" / f"{item.name}.json")


supervise_one = partial(guarded, _supervise_one)


def cmd_supervise(pairs_dir: Path, out: Path, seed: int = 0, config: SupervisionConfig = SupervisionConfig(),
                  workers: int = 1) -> dict:
    """Compose strength-blended targets for ``pairs_dir/input`` vs ``pairs_dir/gt``."""
    pairs_dir = Path(pairs_dir)
    pairs, unmatched = match_pairs(pairs_dir / "input", pairs_dir / "gt")
    for key in unmatched:
        log.warning("skipping unmatched stem %s", key)
    ensure_writable(out)
    items = [
        SuperviseItem(_stem_key(a), pairs_dir / "input" / a, pairs_dir / "gt" / b, Path(out),
                      stable_hash(seed, _stem_key(a)), config)
        for a, b in pairs
    ]
    return _finish(Path(out), run_pool(supervise_one, items, workers), {"unmatched": unmatched})


@dataclass(frozen=True)
class OccludeItem:
    name: str
    path: Path
    out: Path
    seed: int


def _occlude_one(item: OccludeItem) -> dict:
    clean = load_png(item.path)
    degraded, mask = synth_occlusion(clean, item.seed)
    write_png(degraded, item.out / "degraded" / f"{item.name}.png")
    write_png(mask, item.out / "mask" / f"{item.name}.png")
    write_json({"tool": "softfx", "version": __version__, "input": str(item.path), "item_seed": item.seed,
                "timestamps": {"input_mtime": _mtime(item.path)}},
               item.out / "meta" / f"{item.name}.json")


occlude_one = partial(guarded, _occlude_one)


def cmd_occlude(input_dir: Path, out: Path, seed: int = 0, workers: int = 1) -> dict:
    input_dir = Path(input_dir)
    ensure_writable(out)
    items = [OccludeItem(_stem_key(r), input_dir / r, Path(out), stable_hash(seed, r)) for r in list_pngs(input_dir)]
    return _finish(Path(out), run_pool(occlude_one, items, workers))


# --- evaluation ---------------------------------------------------------------------


def _mean(xs) -> Optional[float]:
    xs = list(xs)
    return float(np.mean(xs)) if xs else None


def cmd_eval_contrast(pairs_dir: Path, k: int = DEFAULT_K, threshold: float = DEFAULT_THRESHOLD,
                      dump_maps: Optional[Path] = None) -> list[dict]:
    """Contrast reports for ``pairs_dir/input`` vs ``pairs_dir/output``; the last record is the aggregate."""
    pairs_dir = Path(pairs_dir)
    pairs, unmatched = match_pairs(pairs_dir / "input", pairs_dir / "output")
    for key in unmatched:
        log.warning("skipping unmatched stem %s", key)
    records = []
    for a, b in pairs:
        name = _stem_key(a)
        inp = load_png(pairs_dir / "input" / a)
        outp = load_png(pairs_dir / "output" / b)
        if outp.shape != inp.shape:
            log.warning("%s: resizing output %s to input %s", name, outp.shape, inp.shape)
            outp = resize_to(outp, inp.width, inp.height)
        rep = residual_contrast_gain(inp, outp, k, threshold)
        records.append({"pair": name, **rep.to_dict()})
        if dump_maps is not None:
            Path(dump_maps).mkdir(parents=True, exist_ok=True)
            save_png(contrast_map_raster(inp, k), Path(dump_maps) / f"{name}_input.png")
            save_png(contrast_map_raster(outp, k), Path(dump_maps) / f"{name}_output.png")
    records.append({"aggregate": {
        "pairs": len(pairs),
        "residual_gain": _mean(r["residual_gain"] for r in records) if records else None,
        "global_gain": _mean(r["global_gain"] for r in records) if records else None,
        "edited_fraction": _mean(r["edited_fraction"] for r in records) if records else None,
        "k": k, "threshold": threshold, "unmatched": unmatched,
    }})
    return records


def cmd_eval_vlm(pairs_dir: Path, artifact_name: str, endpoint=None, max_in_flight: int = 4,
                 max_retries: int = 3, sleep=None) -> list[dict]:
    """Judge scores for each (input, output) pair; the last record is the aggregate."""
    from .vlm import EndpointConfig, JudgeRequest, judge_many

    endpoint = endpoint or EndpointConfig.from_env()
    pairs_dir = Path(pairs_dir)
    pairs, unmatched = match_pairs(pairs_dir / "input", pairs_dir / "output")
    requests = [
        JudgeRequest(load_png(pairs_dir / "input" / a), load_png(pairs_dir / "output" / b), artifact_name,
                     model_name=endpoint.model, endpoint=endpoint.api_base, max_retries=max_retries,
                     api_key=endpoint.api_key)
        for a, b in pairs
    ]
    kwargs = {} if sleep is None else {"sleep": sleep}
    results = judge_many(requests, max_in_flight, **kwargs)
    records = []
    for (a, _), res in zip(pairs, results):
        if isinstance(res, Exception):
            records.append({"pair": _stem_key(a), "error": f"{type(res).__name__}: {res}"})
        else:
            records.append({"pair": _stem_key(a), **res.to_dict()})
    scores = [r["score_percent"] for r in records if "score_percent" in r]
    records.append({"aggregate": {
        "pairs": len(pairs), "succeeded": len(scores), "failed": len(pairs) - len(scores),
        "mean_score": _mean(scores), "artifact": artifact_name, "unmatched": unmatched,
    }})
    return records
