"""Dataset directory persistence.

Layout::

    <dir>/manifest.json    category, J_max, K, N, d, seed, split lists
    <dir>/actions.txt      one line per sample: id instance split a0 a1 ...
    <dir>/points/sample_NNNN.bin
                           header: two little-endian uint32 (N, d),
                           payload: N*d little-endian float32

Generation is a pure function of (category spec, seed), so templates and
normalizers are rebuilt from the manifest rather than persisted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kinematics import (CategorySpec, Dataset, build_instance,
                         rest_pose_normalizer)

FORMAT_VERSION = 1


def save_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    (path / "points").mkdir(parents=True, exist_ok=True)
    d = ds.samples[0].points.shape[1]
    manifest = {
        "format_version": FORMAT_VERSION,
        "category": ds.category,
        "j_max": ds.j_max,
        "n_instances": len(ds.templates),
        "n_points": ds.n_points,
        "point_dim": d,
        "colored": ds.colored,
        "seed": ds.seed,
        "splits": {
            "train": [i for i, s in enumerate(ds.samples) if s.split == "train"],
            "test": [i for i, s in enumerate(ds.samples) if s.split == "test"],
        },
        "instances": [s.instance for s in ds.samples],
    }
    (path / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    with open(path / "actions.txt", "w") as fh:
        for i, s in enumerate(ds.samples):
            angles = " ".join(repr(float(a)) for a in s.action)
            fh.write(f"{i} {s.instance} {s.split} {angles}\n")
    for i, s in enumerate(ds.samples):
        write_point_record(path / "points" / f"sample_{i:04d}.bin", s.points)


def write_point_record(path, points: np.ndarray) -> None:
    points = np.asarray(points)
    header = np.array(points.shape, dtype="<u4")
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        fh.write(points.astype("<f4").tobytes())


def read_point_record(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    n, d = np.frombuffer(raw[:8], dtype="<u4")
    pts = np.frombuffer(raw[8:], dtype="<f4").astype(np.float64)
    return pts.reshape(int(n), int(d))


@dataclass
class LoadedDataset:
    category: str
    j_max: int
    n_instances: int
    n_points: int
    point_dim: int
    colored: bool
    seed: int
    points: np.ndarray      # (K_samples, N, d)
    actions: np.ndarray     # (K_samples, J_max)
    instances: np.ndarray   # (K_samples,)
    splits: dict            # split name -> list of sample ids

    def split_arrays(self, split: str) -> tuple:
        idx = self.splits.get(split, [])
        if not idx:
            raise ValueError(f"split {split!r} is empty")
        return self.points[idx], self.actions[idx], self.instances[idx]

    def rebuild_templates(self) -> tuple:
        """Templates and per-instance normalizers, regenerated from the seed."""
        spec = CategorySpec(self.category, n_instances=self.n_instances)
        templates = instance_templates(spec, self.seed)
        normalizers = [rest_pose_normalizer(t) for t in templates]
        return templates, normalizers


def instance_templates(spec: CategorySpec, seed: int) -> list:
    """The same instance streams used by dataset generation."""
    master = np.random.default_rng(seed)
    inst_seeds = master.integers(0, 2**31, size=spec.n_instances)
    return [build_instance(spec, np.random.default_rng(int(s))) for s in inst_seeds]


def load_dataset(path) -> LoadedDataset:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest["format_version"] != FORMAT_VERSION:
        raise ValueError(
            f"unsupported dataset format version {manifest['format_version']}")
    actions = []
    instances = []
    with open(path / "actions.txt") as fh:
        for line in fh:
            fields = line.split()
            instances.append(int(fields[1]))
            actions.append([float(x) for x in fields[3:]])
    n_samples = len(actions)
    points = np.stack([
        read_point_record(path / "points" / f"sample_{i:04d}.bin")
        for i in range(n_samples)
    ])
    return LoadedDataset(
        category=manifest["category"], j_max=manifest["j_max"],
        n_instances=manifest["n_instances"],
        n_points=manifest["n_points"], point_dim=manifest["point_dim"],
        colored=manifest["colored"], seed=manifest["seed"],
        points=points, actions=np.array(actions),
        instances=np.array(instances), splits=manifest["splits"])
