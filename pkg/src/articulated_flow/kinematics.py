"""Synthetic articulated mechanisms: parametric templates, forward
kinematics over revolute joint trees, area-weighted surface sampling and
deterministic dataset generation with a train/test split over actions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CATEGORY_NAMES = ("pliers", "scissors", "eyeglasses", "arm3")


# ---------------------------------------------------------------------------
# Primitives


@dataclass
class Primitive:
    """An axis-aligned surface primitive placed at `center` in the rest frame.

    kind 'box': size = (sx, sy, sz) full extents.
    kind 'cylinder': size = (radius, length, 0), axis along local x.
    kind 'capsule': size = (radius, length, 0), axis along local x.
    """

    kind: str
    size: tuple
    center: tuple
    rgb: tuple

    def area(self) -> float:
        if self.kind == "box":
            sx, sy, sz = self.size
            return 2.0 * (sx * sy + sy * sz + sz * sx)
        if self.kind == "cylinder":
            r, l, _ = self.size
            return 2.0 * np.pi * r * l + 2.0 * np.pi * r * r
        if self.kind == "capsule":
            r, l, _ = self.size
            return 2.0 * np.pi * r * l + 4.0 * np.pi * r * r
        raise ValueError(f"unknown primitive kind {self.kind!r}")

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n points uniform on the surface, in the rest frame."""
        c = np.asarray(self.center)
        if self.kind == "box":
            return c + _sample_box(np.asarray(self.size), n, rng)
        if self.kind == "cylinder":
            return c + _sample_cylinder(self.size[0], self.size[1], n, rng)
        if self.kind == "capsule":
            return c + _sample_capsule(self.size[0], self.size[1], n, rng)
        raise ValueError(f"unknown primitive kind {self.kind!r}")

    def surface_distance(self, pts: np.ndarray) -> np.ndarray:
        """Unsigned distance from each point to the primitive surface."""
        p = np.asarray(pts) - np.asarray(self.center)
        if self.kind == "box":
            half = np.asarray(self.size) / 2.0
            q = np.abs(p) - half
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
            inside = np.minimum(q.max(axis=-1), 0.0)
            return np.abs(outside + inside)
        r, l, _ = self.size
        if self.kind == "cylinder":
            rad = np.linalg.norm(p[:, 1:], axis=-1)
            over = np.maximum(np.abs(p[:, 0]) - l / 2.0, 0.0)
            d_shell = np.sqrt(over**2 + (rad - r) ** 2)
            d_cap = np.sqrt((np.abs(p[:, 0]) - l / 2.0) ** 2
                            + np.maximum(rad - r, 0.0) ** 2)
            return np.minimum(d_shell, d_cap)
        if self.kind == "capsule":
            ax = np.clip(p[:, 0], -l / 2.0, l / 2.0)
            closest = np.stack([ax, np.zeros(len(p)), np.zeros(len(p))], axis=-1)
            return np.abs(np.linalg.norm(p - closest, axis=-1) - r)
        raise ValueError(f"unknown primitive kind {self.kind!r}")


def _sample_box(size: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    sx, sy, sz = size
    areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
    faces = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, size=(n, 2))
    pts = np.empty((n, 3))
    half = size / 2.0
    for f in range(6):
        m = faces == f
        axis = f // 2
        sign = 1.0 if f % 2 == 0 else -1.0
        other = [i for i in range(3) if i != axis]
        pts[m, axis] = sign * half[axis]
        pts[m, other[0]] = u[m, 0] * size[other[0]]
        pts[m, other[1]] = u[m, 1] * size[other[1]]
    return pts


def _sample_cylinder(r: float, l: float, n: int, rng: np.random.Generator) -> np.ndarray:
    a_side = 2.0 * np.pi * r * l
    a_cap = np.pi * r * r
    which = rng.choice(3, size=n, p=np.array([a_side, a_cap, a_cap]) / (a_side + 2 * a_cap))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    pts = np.empty((n, 3))
    side = which == 0
    pts[side, 0] = rng.uniform(-l / 2.0, l / 2.0, size=side.sum())
    pts[side, 1] = r * np.cos(theta[side])
    pts[side, 2] = r * np.sin(theta[side])
    for cap, sign in ((1, 1.0), (2, -1.0)):
        m = which == cap
        rad = r * np.sqrt(rng.uniform(0.0, 1.0, size=m.sum()))
        pts[m, 0] = sign * l / 2.0
        pts[m, 1] = rad * np.cos(theta[m])
        pts[m, 2] = rad * np.sin(theta[m])
    return pts


def _sample_capsule(r: float, l: float, n: int, rng: np.random.Generator) -> np.ndarray:
    a_side = 2.0 * np.pi * r * l
    a_sph = 4.0 * np.pi * r * r
    which = rng.choice(2, size=n, p=np.array([a_side, a_sph]) / (a_side + a_sph))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    pts = np.empty((n, 3))
    side = which == 0
    pts[side, 0] = rng.uniform(-l / 2.0, l / 2.0, size=side.sum())
    pts[side, 1] = r * np.cos(theta[side])
    pts[side, 2] = r * np.sin(theta[side])
    m = which == 1
    z = rng.uniform(-1.0, 1.0, size=m.sum())
    rad = np.sqrt(1.0 - z * z)
    hemi = np.sign(z)
    hemi[hemi == 0] = 1.0
    pts[m, 0] = r * z + hemi * l / 2.0
    pts[m, 1] = r * rad * np.cos(theta[m])
    pts[m, 2] = r * rad * np.sin(theta[m])
    return pts


# ---------------------------------------------------------------------------
# Templates


@dataclass
class Joint:
    parent: int
    child: int
    axis: tuple        # unit vector, rest frame
    origin: tuple      # point on the axis, rest frame
    limits: tuple      # (lo, hi) radians

    def __post_init__(self):
        ax = np.asarray(self.axis, dtype=np.float64)
        if not np.isclose(np.linalg.norm(ax), 1.0, atol=1e-9):
            raise ValueError(f"joint axis must be unit norm, got {self.axis}")
        lo, hi = self.limits
        if not lo < hi:
            raise ValueError(f"joint limits must satisfy lo < hi, got {self.limits}")


@dataclass
class ArticulatedTemplate:
    """Rigid parts in a rest pose plus a tree of revolute joints.

    Part geometry is expressed in the shared rest frame; joint j rotates
    everything in the subtree of its child about (axis, origin) by A_j, so
    the zero action reproduces the rest pose exactly.
    """

    parts: list            # list[list[Primitive]] per part
    joints: list           # list[Joint], tree rooted at part 0
    shape_params: np.ndarray

    def __post_init__(self):
        seen = {0}
        for j in self.joints:
            if j.parent not in seen or j.child in seen:
                raise ValueError("joint graph must be a tree rooted at part 0")
            seen.add(j.child)
        if seen != set(range(len(self.parts))):
            raise ValueError("every part must be connected to the tree")

    @property
    def dof(self) -> int:
        return len(self.joints)

    def joint_of_part(self) -> list:
        """For each part, the index of the joint whose child it is (-1 for root)."""
        out = [-1] * len(self.parts)
        for k, j in enumerate(self.joints):
            out[j.child] = k
        return out


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix."""
    k = np.asarray(axis, dtype=np.float64)
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * kx + (1.0 - np.cos(angle)) * (kx @ kx)


def _homogeneous(rot: np.ndarray, trans: np.ndarray) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = rot
    T[:3, 3] = trans
    return T


def forward_kinematics(template: ArticulatedTemplate, action: np.ndarray,
                       clamp: bool = False) -> np.ndarray:
    """Per-part 4x4 rigid transforms (rest frame -> posed frame).

    Composes parent-first along the tree; joint j contributes a rotation by
    action[j] about its axis through its origin. Out-of-limit actions raise
    unless `clamp` allows extrapolation probes.
    """
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (template.dof,):
        raise ValueError(
            f"action length {action.shape} does not match DoF {template.dof}"
        )
    checked = action.copy()
    for k, j in enumerate(template.joints):
        lo, hi = j.limits
        if not lo <= checked[k] <= hi:
            if clamp:
                pass  # extrapolation probe: apply the raw angle
            else:
                raise ValueError(
                    f"action[{k}]={checked[k]:.4f} outside limits [{lo}, {hi}]"
                )
    transforms = [np.eye(4) for _ in template.parts]
    for k, j in enumerate(template.joints):
        rot = rotation_about_axis(np.asarray(j.axis), checked[k])
        o = np.asarray(j.origin)
        local = _homogeneous(rot, o - rot @ o)
        transforms[j.child] = transforms[j.parent] @ local
    return np.stack(transforms)


def sample_surface(template: ArticulatedTemplate, transforms: np.ndarray,
                   n: int, rng: np.random.Generator,
                   colored: bool = False) -> np.ndarray:
    """n points area-weighted across parts, posed by the per-part transforms.

    Returns (n, 3), or (n, 6) with each part's RGB appended when colored.
    """
    if n < 1:
        raise ValueError("need at least one point")
    prims = [(pi, prim) for pi, part in enumerate(template.parts) for prim in part]
    areas = np.array([prim.area() for _, prim in prims])
    counts = rng.multinomial(n, areas / areas.sum())
    chunks = []
    for (pi, prim), c in zip(prims, counts):
        if c == 0:
            continue
        pts = prim.sample_surface(c, rng)
        T = transforms[pi]
        posed = pts @ T[:3, :3].T + T[:3, 3]
        if colored:
            rgb = np.tile(np.asarray(prim.rgb), (c, 1))
            posed = np.concatenate([posed, rgb], axis=1)
        chunks.append(posed)
    return np.concatenate(chunks, axis=0)


# ---------------------------------------------------------------------------
# Categories


@dataclass
class CategorySpec:
    name: str
    n_instances: int = 8
    seed_hint: str = ""

    def __post_init__(self):
        if self.name not in CATEGORY_NAMES:
            raise ValueError(
                f"unknown category {self.name!r}; expected one of {CATEGORY_NAMES}"
            )


def build_instance(spec: CategorySpec, rng: np.random.Generator) -> ArticulatedTemplate:
    """Draw one template with shape parameters uniform in the category ranges."""
    builder = _BUILDERS[spec.name]
    return builder(rng)


def _pliers(rng: np.random.Generator) -> ArticulatedTemplate:
    # two crossed handles hinged at the origin, opening about +z
    length = rng.uniform(0.8, 1.4)
    width = rng.uniform(0.08, 0.16)
    thickness = rng.uniform(0.04, 0.10)
    jaw = rng.uniform(0.3, 0.5) * length
    params = np.array([length, width, thickness, jaw])
    handle0 = [
        Primitive("box", (length, width, thickness), (-length / 2.0, 0.0, 0.0),
                  (0.8, 0.2, 0.2)),
        Primitive("box", (jaw, width * 0.8, thickness), (jaw / 2.0, 0.0, 0.0),
                  (0.8, 0.2, 0.2)),
    ]
    handle1 = [
        Primitive("box", (length, width, thickness),
                  (-length / 2.0, 0.0, thickness * 1.05), (0.2, 0.2, 0.8)),
        Primitive("box", (jaw, width * 0.8, thickness),
                  (jaw / 2.0, 0.0, thickness * 1.05), (0.2, 0.2, 0.8)),
    ]
    joints = [Joint(0, 1, (0.0, 0.0, 1.0), (0.0, 0.0, 0.0), (0.0, np.pi / 2.0))]
    return ArticulatedTemplate([handle0, handle1], joints, params)


def _scissors(rng: np.random.Generator) -> ArticulatedTemplate:
    # two thin blades crossing at a pivot, like pliers but slimmer
    length = rng.uniform(0.9, 1.3)
    width = rng.uniform(0.05, 0.10)
    thickness = rng.uniform(0.02, 0.05)
    params = np.array([length, width, thickness])
    blade0 = [
        Primitive("box", (length, width, thickness), (length / 2.0, 0.0, 0.0),
                  (0.7, 0.7, 0.7)),
        Primitive("cylinder", (width * 1.2, length * 0.5, 0.0),
                  (-length * 0.25, 0.0, 0.0), (0.9, 0.5, 0.1)),
    ]
    blade1 = [
        Primitive("box", (length, width, thickness),
                  (length / 2.0, 0.0, thickness * 1.05), (0.6, 0.6, 0.65)),
        Primitive("cylinder", (width * 1.2, length * 0.5, 0.0),
                  (-length * 0.25, 0.0, thickness * 1.05), (0.1, 0.5, 0.9)),
    ]
    joints = [Joint(0, 1, (0.0, 0.0, 1.0), (0.0, 0.0, 0.0), (0.0, np.pi / 2.0))]
    return ArticulatedTemplate([blade0, blade1], joints, params)


def _eyeglasses(rng: np.random.Generator) -> ArticulatedTemplate:
    # frame plus two temples on hinges about z at the frame's ends
    frame_w = rng.uniform(1.0, 1.4)
    temple_l = rng.uniform(0.8, 1.2)
    bar = rng.uniform(0.04, 0.08)
    params = np.array([frame_w, temple_l, bar])
    frame = [
        Primitive("box", (frame_w, bar, bar), (0.0, 0.0, 0.0), (0.2, 0.2, 0.2)),
        Primitive("cylinder", (frame_w * 0.18, bar, 0.0),
                  (-frame_w * 0.25, 0.0, -bar), (0.3, 0.5, 0.8)),
        Primitive("cylinder", (frame_w * 0.18, bar, 0.0),
                  (frame_w * 0.25, 0.0, -bar), (0.3, 0.5, 0.8)),
    ]
    temple_left = [
        Primitive("box", (bar, temple_l, bar),
                  (-frame_w / 2.0, temple_l / 2.0, 0.0), (0.6, 0.3, 0.1)),
    ]
    temple_right = [
        Primitive("box", (bar, temple_l, bar),
                  (frame_w / 2.0, temple_l / 2.0, 0.0), (0.6, 0.3, 0.1)),
    ]
    joints = [
        Joint(0, 1, (0.0, 0.0, 1.0), (-frame_w / 2.0, 0.0, 0.0), (0.0, np.pi / 2.0)),
        Joint(0, 2, (0.0, 0.0, -1.0), (frame_w / 2.0, 0.0, 0.0), (0.0, np.pi / 2.0)),
    ]
    return ArticulatedTemplate([frame, temple_left, temple_right], joints, params)


def _arm3(rng: np.random.Generator) -> ArticulatedTemplate:
    # serial chain: base + three capsule links, hinges about alternating axes
    link = [rng.uniform(0.5, 0.8) for _ in range(3)]
    radius = rng.uniform(0.05, 0.10)
    params = np.array(link + [radius])
    base = [Primitive("box", (0.3, 0.3, 0.15), (0.0, 0.0, -0.075), (0.3, 0.3, 0.3))]
    parts = [base]
    joints = []
    x = 0.0
    axes = [(0.0, 0.0, 1.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)]
    colors = [(0.8, 0.3, 0.2), (0.2, 0.7, 0.3), (0.2, 0.3, 0.8)]
    for i in range(3):
        parts.append([
            Primitive("capsule", (radius, link[i], 0.0),
                      (x + link[i] / 2.0, 0.0, 0.0), colors[i]),
        ])
        joints.append(Joint(i, i + 1, axes[i], (x, 0.0, 0.0),
                            (-np.pi / 2.0, np.pi / 2.0)))
        x += link[i]
    return ArticulatedTemplate(parts, joints, params)


_BUILDERS = {
    "pliers": _pliers,
    "scissors": _scissors,
    "eyeglasses": _eyeglasses,
    "arm3": _arm3,
}


# ---------------------------------------------------------------------------
# Dataset generation


def pad_action(action: np.ndarray, j_max: int) -> np.ndarray:
    """Right-pad joint values with zeros up to the category max DoF."""
    action = np.asarray(action, dtype=np.float64)
    if action.ndim != 1 or len(action) > j_max:
        raise ValueError(f"action length {action.shape} exceeds J_max={j_max}")
    out = np.zeros(j_max)
    out[: len(action)] = action
    return out


@dataclass
class KinematicSample:
    points: np.ndarray     # (N, d)
    action: np.ndarray     # (J_max,) zero-padded
    instance: int
    split: str             # "train" or "test"


@dataclass
class Dataset:
    category: str
    j_max: int
    n_points: int
    colored: bool
    seed: int
    samples: list = field(default_factory=list)
    templates: list = field(default_factory=list)
    normalizers: list = field(default_factory=list)  # (center, radius) per instance

    def split_indices(self, split: str) -> list:
        idx = [i for i, s in enumerate(self.samples) if s.split == split]
        if not idx:
            raise ValueError(f"split {split!r} is empty")
        return idx


def rest_pose_normalizer(template: ArticulatedTemplate,
                         n_probe: int = 4096) -> tuple:
    """Center and radius of the rest pose's bounding sphere (probe estimate).

    Deterministic: the probe stream is derived from the template's shape
    parameters only, so normalization is a pure function of the template.
    """
    probe_seed = int(np.abs(template.shape_params * 1e6).sum()) % (2**31)
    rng = np.random.default_rng(probe_seed)
    rest = forward_kinematics(template, np.zeros(template.dof))
    pts = sample_surface(template, rest, n_probe, rng)[:, :3]
    center = (pts.min(axis=0) + pts.max(axis=0)) / 2.0
    radius = float(np.linalg.norm(pts - center, axis=1).max())
    return center, radius


def normalize_points(points: np.ndarray, center: np.ndarray,
                     radius: float) -> np.ndarray:
    out = points.copy()
    out[:, :3] = (out[:, :3] - center) / radius
    return out


def posed_cloud(template: ArticulatedTemplate, action: np.ndarray,
                n_points: int, rng: np.random.Generator, center: np.ndarray,
                radius: float, colored: bool = False,
                clamp: bool = False) -> np.ndarray:
    """FK + surface sampling + the instance's rest-pose normalization."""
    transforms = forward_kinematics(template, action, clamp=clamp)
    pts = sample_surface(template, transforms, n_points, rng, colored=colored)
    return normalize_points(pts, center, radius)


def _draw_test_actions(limits: np.ndarray, n_train: int, n_test: int,
                       rng: np.random.Generator) -> tuple:
    lo, hi = limits[:, 0], limits[:, 1]
    train = rng.uniform(lo, hi, size=(n_train, len(lo)))
    test = np.empty((n_test, len(lo)))
    for i in range(n_test):
        while True:
            cand = rng.uniform(lo, hi)
            if np.abs(train - cand).max(axis=1).min() >= 1e-6:
                test[i] = cand
                break
    return train, test


def generate_dataset(spec: CategorySpec, samples_per_instance: int = 60,
                     n_points: int = 256, seed: int = 0,
                     colored: bool = False) -> Dataset:
    """Build K instances, draw actions uniform within limits, run FK and
    surface sampling, and assign a 5:1 train-test split by action.

    Every test action differs from all train actions of the same instance
    by at least 1e-6 in sup-norm (rejection sampled).
    """
    master = np.random.default_rng(seed)
    inst_seeds = master.integers(0, 2**31, size=spec.n_instances)
    templates = [
        build_instance(spec, np.random.default_rng(int(s))) for s in inst_seeds
    ]
    j_max = max(t.dof for t in templates)
    n_test = samples_per_instance // 6
    n_train = samples_per_instance - n_test

    ds = Dataset(category=spec.name, j_max=j_max, n_points=n_points,
                 colored=colored, seed=seed, templates=templates)
    for inst, (template, s) in enumerate(zip(templates, inst_seeds)):
        center, radius = rest_pose_normalizer(template)
        ds.normalizers.append((center, radius))
        rng = np.random.default_rng(int(s) + 1)
        limits = np.array([j.limits for j in template.joints])
        train_a, test_a = _draw_test_actions(limits, n_train, n_test, rng)
        for split, actions in (("train", train_a), ("test", test_a)):
            for a in actions:
                pts = posed_cloud(template, a, n_points, rng, center, radius,
                                  colored=colored)
                ds.samples.append(KinematicSample(
                    points=pts.astype(np.float64),
                    action=pad_action(a, j_max),
                    instance=inst, split=split))
    return ds
