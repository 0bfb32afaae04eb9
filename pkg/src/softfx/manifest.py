"""Multi-task dataset manifests and balanced hierarchical sampling.

Each draw picks a task uniformly, then a dataset within the task by its
normalized weight, then a record uniformly within the dataset.

Manifest JSON::

    {"tasks": [{"task_name": "dehaze",
                "datasets": [{"dataset_name": "ohaze", "weight": 3,
                              "records": [{"input": "a.png", "gt": "b.png",
                                           "mask": null, "depth": null}]}]}]}
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .seeding import child

log = logging.getLogger(__name__)


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    input: str
    gt: str
    mask: Optional[str] = None
    depth: Optional[str] = None

    def to_dict(self) -> dict:
        d = {"input": self.input, "gt": self.gt}
        if self.mask is not None:
            d["mask"] = self.mask
        if self.depth is not None:
            d["depth"] = self.depth
        return d


@dataclass(frozen=True)
class Dataset:
    name: str
    weight: float
    records: tuple[Record, ...]


@dataclass(frozen=True)
class Task:
    name: str
    datasets: tuple[Dataset, ...]

    @property
    def weights(self) -> np.ndarray:
        return np.array([d.weight for d in self.datasets])


@dataclass(frozen=True)
class DatasetManifest:
    tasks: tuple[Task, ...]


@dataclass(frozen=True)
class Draw:
    task: str
    dataset: str
    record: Record

    def to_dict(self) -> dict:
        return {"task": self.task, "dataset": self.dataset, **self.record.to_dict()}


def _record(raw, where: str) -> Record:
    if not isinstance(raw, dict) or not isinstance(raw.get("input"), str) or not isinstance(raw.get("gt"), str):
        raise ManifestError(f"{where}: a record needs string 'input' and 'gt' paths")
    for key in ("mask", "depth"):
        if raw.get(key) is not None and not isinstance(raw[key], str):
            raise ManifestError(f"{where}: '{key}' must be a path string")
    return Record(raw["input"], raw["gt"], raw.get("mask"), raw.get("depth"))


def parse_manifest(doc) -> DatasetManifest:
    """Validate a decoded manifest document and normalize weights per task."""
    if not isinstance(doc, dict) or not isinstance(doc.get("tasks"), list):
        raise ManifestError("manifest must be an object with a 'tasks' list")
    if not doc["tasks"]:
        raise ManifestError("manifest has no tasks")
    tasks = []
    for t in doc["tasks"]:
        if not isinstance(t, dict) or not isinstance(t.get("task_name"), str):
            raise ManifestError("each task needs a string 'task_name'")
        tname = t["task_name"]
        raw_sets = t.get("datasets")
        if not isinstance(raw_sets, list) or not raw_sets:
            raise ManifestError(f"task {tname!r} has no datasets")
        kept = []
        for d in raw_sets:
            if not isinstance(d, dict) or not isinstance(d.get("dataset_name"), str):
                raise ManifestError(f"task {tname!r}: each dataset needs a string 'dataset_name'")
            dname = d["dataset_name"]
            weight = d.get("weight", 1.0)
            if isinstance(weight, bool) or not isinstance(weight, (int, float)) or not np.isfinite(weight) or weight < 0:
                raise ManifestError(f"{tname}/{dname}: weight must be a finite number >= 0")
            if weight == 0:
                log.warning("dropping zero-weight dataset %s/%s", tname, dname)
                continue
            raw_records = d.get("records")
            if not isinstance(raw_records, list) or not raw_records:
                raise ManifestError(f"{tname}/{dname} has no records")
            records = tuple(_record(r, f"{tname}/{dname}") for r in raw_records)
            kept.append((dname, float(weight), records))
        if not kept:
            raise ManifestError(f"task {tname!r}: all dataset weights are zero")
        total = sum(w for _, w, _ in kept)
        tasks.append(Task(tname, tuple(Dataset(n, w / total, r) for n, w, r in kept)))
    return DatasetManifest(tuple(tasks))


def load_manifest(path) -> DatasetManifest:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"cannot parse manifest {path}: {e}") from e
    return parse_manifest(doc)


def sample(manifest: DatasetManifest, seed, n: int) -> list[Draw]:
    """Draw ``n`` i.i.d. (task, dataset, record) triples; fixed seed gives a fixed sequence."""
    if n < 0:
        raise ValueError("n must be >= 0")
    rng = np.random.default_rng(seed)
    task_idx = rng.integers(len(manifest.tasks), size=n)
    u_dataset = rng.random(n)
    u_record = rng.random(n)
    cums = [np.cumsum(t.weights) for t in manifest.tasks]
    draws = []
    for ti, ud, ur in zip(task_idx, u_dataset, u_record):
        task = manifest.tasks[ti]
        cum = cums[ti]
        di = min(int(np.searchsorted(cum, ud * cum[-1], side="right")), len(cum) - 1)
        ds = task.datasets[di]
        ri = min(int(ur * len(ds.records)), len(ds.records) - 1)
        draws.append(Draw(task.name, ds.name, ds.records[ri]))
    return draws


def worker_seed(global_seed: int, worker_index: int) -> np.random.SeedSequence:
    """Independent sampler stream for one worker."""
    return child(global_seed, worker_index)
