"""ASCII PLY export/import for point clouds.

Coordinates are written as float32-precision text; colors in [0,1] are
stored as 8-bit red/green/blue properties.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def write_ply(path, points: np.ndarray) -> None:
    points = np.asarray(points)
    if points.ndim != 2 or points.shape[1] not in (3, 6):
        raise ValueError(f"expected (N, 3) or (N, 6) points, got {points.shape}")
    colored = points.shape[1] == 6
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(points)}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if colored:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    xyz = points[:, :3].astype(np.float32)
    if colored:
        rgb = np.clip(np.rint(points[:, 3:6] * 255.0), 0, 255).astype(np.uint8)
        for p, c in zip(xyz, rgb):
            lines.append(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r} "
                         f"{c[0]} {c[1]} {c[2]}")
    else:
        for p in xyz:
            lines.append(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path) -> np.ndarray:
    text = Path(path).read_text().splitlines()
    if text[0] != "ply":
        raise ValueError(f"{path}: not a PLY file")
    n_vertex = None
    props = []
    i = 1
    while text[i] != "end_header":
        fields = text[i].split()
        if fields[0] == "element" and fields[1] == "vertex":
            n_vertex = int(fields[2])
        elif fields[0] == "property":
            props.append(fields[2])
        i += 1
    if n_vertex is None:
        raise ValueError(f"{path}: missing vertex element")
    body = [line.split() for line in text[i + 1: i + 1 + n_vertex]]
    data = np.array(body, dtype=np.float64)
    if len(props) >= 6:
        data[:, 3:6] /= 255.0
    return data
