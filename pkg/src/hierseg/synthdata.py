"""Synthetic nucleus-like datasets that share leaf classes but differ in cuts.

Every image is a square patch of non-overlapping elliptical blobs on a
noisy background.  Each blob is drawn from one leaf class; what ends up in
the class map is the cut member covering that leaf (or background when the
cut does not cover it, in which case the blob is not an instance either).
Blob placement and colours depend only on ``(seed, image index)`` and the
appearance spec, never on the cut, so two datasets generated with one seed
and different cuts show the same pixels.
"""

from __future__ import annotations

import colorsys
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .hierarchy import ClassTree, LabelSet, check_fingerprint, parse_hierarchy, validate_cut, HierarchyError
from .metrics import MaskPair
from .netpbm import NetpbmError, read_netpbm, write_pgm, write_ppm
from .seeding import derive_seed

__all__ = [
    "DataError",
    "LeafAppearance",
    "AppearanceSpec",
    "default_appearance",
    "shift_appearance",
    "render_image",
    "DatasetManifest",
    "generate_dataset",
    "Dataset",
    "load_dataset",
    "split_indices",
    "AugmentParams",
    "draw_augmentation",
    "apply_augmentation",
    "augment",
]

MANIFEST_FORMAT = "hierseg-dataset/1"
BLOB_MARGIN = 2
MAX_PLACEMENT_TRIES = 200


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class LeafAppearance:
    color: tuple[float, float, float]
    jitter: float
    radius: tuple[float, float]
    eccentricity: tuple[float, float]
    texture: float

    def __post_init__(self):
        if min(self.radius) < 2:
            raise DataError(f"blob radii must be >= 2 px, got {self.radius}")
        if not all(0.0 <= v <= 1.0 for v in self.color):
            raise DataError(f"colors must lie in [0, 1], got {self.color}")
        if not 0.0 <= self.eccentricity[0] <= self.eccentricity[1] < 1.0:
            raise DataError(f"eccentricity range must lie in [0, 1), got {self.eccentricity}")


@dataclass(frozen=True)
class AppearanceSpec:
    leaves: tuple[LeafAppearance, ...]
    background: tuple[float, float, float] = (0.92, 0.84, 0.88)
    background_noise: float = 0.03
    blobs_per_image: tuple[int, int] = (4, 9)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "AppearanceSpec":
        leaves = tuple(
            LeafAppearance(
                color=tuple(x["color"]),
                jitter=x["jitter"],
                radius=tuple(x["radius"]),
                eccentricity=tuple(x["eccentricity"]),
                texture=x["texture"],
            )
            for x in d["leaves"]
        )
        return cls(
            leaves=leaves,
            background=tuple(d["background"]),
            background_noise=d["background_noise"],
            blobs_per_image=tuple(d["blobs_per_image"]),
        )

    @property
    def hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def default_appearance(tree: ClassTree) -> AppearanceSpec:
    """Hue follows the top-level branch; shade, size and texture follow the
    leaf's rank inside its branch, so sibling leaves differ more subtly
    than leaves of different super-classes."""
    top = tree.children[tree.root] or (tree.root,)
    branch_of = {}
    for b, node in enumerate(top):
        for j in sorted(tree.subtree_leaves(node)):
            branch_of[j] = b
    leaves = []
    for j in range(tree.n_leaves):
        b = branch_of[j]
        siblings = [i for i in range(tree.n_leaves) if branch_of[i] == b]
        rank = siblings.index(j)
        frac = rank / max(1, len(siblings) - 1)
        hue = (0.70 + b / len(top)) % 1.0
        sat = 0.75 - 0.35 * frac
        val = 0.40 + 0.35 * frac
        color = tuple(round(c, 6) for c in colorsys.hsv_to_rgb(hue, sat, val))
        small = rank % 2 == 0
        leaves.append(
            LeafAppearance(
                color=color,
                jitter=0.03,
                radius=(3.0, 5.0) if small else (4.5, 7.0),
                eccentricity=(0.0, 0.5) if small else (0.4, 0.8),
                texture=0.02 + 0.04 * (rank % 3),
            )
        )
    return AppearanceSpec(leaves=tuple(leaves))


def _rotate_hue(rgb, turns: float, sat_scale: float, gain: float):
    h, s, v = colorsys.rgb_to_hsv(*rgb)
    r, g, b = colorsys.hsv_to_rgb((h + turns) % 1.0, min(1.0, s * sat_scale), min(1.0, v * gain))
    return tuple(round(min(1.0, max(0.0, c)), 6) for c in (r, g, b))


def shift_appearance(spec: AppearanceSpec, seed: int, strength: float = 1.0) -> AppearanceSpec:
    """Stain-like domain shift: one hue turn, saturation and gain per seed."""
    rng = np.random.default_rng(derive_seed(seed, "appearance-shift"))
    turns = float(rng.uniform(-0.03, 0.03)) * strength
    sat = 1.0 + float(rng.uniform(-0.15, 0.05)) * strength
    gain = 1.0 + float(rng.uniform(-0.1, 0.1)) * strength
    leaves = tuple(
        LeafAppearance(
            color=_rotate_hue(leaf.color, turns, sat, gain),
            jitter=leaf.jitter,
            radius=leaf.radius,
            eccentricity=leaf.eccentricity,
            texture=leaf.texture,
        )
        for leaf in spec.leaves
    )
    return AppearanceSpec(
        leaves=leaves,
        background=_rotate_hue(spec.background, turns, sat, gain),
        background_noise=spec.background_noise,
        blobs_per_image=spec.blobs_per_image,
    )


def _ellipse(size: int, cy: float, cx: float, a: float, b: float, theta: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _dilate(mask: np.ndarray, r: int) -> np.ndarray:
    out = mask.copy()
    for _ in range(r):
        grown = out.copy()
        grown[1:] |= out[:-1]
        grown[:-1] |= out[1:]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        grown[1:, 1:] |= out[:-1, :-1]
        grown[:-1, :-1] |= out[1:, 1:]
        grown[1:, :-1] |= out[:-1, 1:]
        grown[:-1, 1:] |= out[1:, :-1]
        out = grown
    return out


def render_image(appearance: AppearanceSpec, seed: int, index: int, patch_size: int):
    """Draw one patch.

    Returns ``(image uint8 HxWx3, blob id map, leaf index per blob)`` where
    blob ids start at 1.
    """
    rng = np.random.default_rng(derive_seed(seed, index))
    size = patch_size
    n_leaves = len(appearance.leaves)
    lo, hi = appearance.blobs_per_image
    target = int(rng.integers(lo, hi + 1))

    blob_map = np.zeros((size, size), dtype=np.int64)
    blocked = np.zeros((size, size), dtype=bool)
    blob_leaves: list[int] = []
    for _ in range(target):
        leaf = int(rng.integers(n_leaves))
        spec = appearance.leaves[leaf]
        for _attempt in range(MAX_PLACEMENT_TRIES):
            a = rng.uniform(*spec.radius)
            ecc = rng.uniform(*spec.eccentricity)
            b = max(1.5, a * np.sqrt(1.0 - ecc**2))
            theta = rng.uniform(0.0, np.pi)
            if size - a - 2 < a + 1:
                continue
            cy = rng.uniform(a + 1, size - a - 2)
            cx = rng.uniform(a + 1, size - a - 2)
            mask = _ellipse(size, cy, cx, a, b, theta)
            if mask.sum() >= 4 and not (mask & blocked).any():
                break
        else:
            raise DataError(
                f"could not place blob {len(blob_leaves) + 1} of {target} in a {size}x{size} patch "
                f"after {MAX_PLACEMENT_TRIES} tries"
            )
        blob_leaves.append(leaf)
        blob_map[mask] = len(blob_leaves)
        blocked |= _dilate(mask, BLOB_MARGIN)

    bg = np.asarray(appearance.background)
    image = bg + rng.normal(0.0, appearance.background_noise, size=(size, size, 1))
    image = np.broadcast_to(image, (size, size, 3)).copy()
    for blob_id, leaf in enumerate(blob_leaves, start=1):
        spec = appearance.leaves[leaf]
        mask = blob_map == blob_id
        color = np.asarray(spec.color) + rng.normal(0.0, spec.jitter, size=3)
        texture = rng.normal(0.0, spec.texture, size=(int(mask.sum()), 1))
        image[mask] = color + texture
    image = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    return image, blob_map, blob_leaves


def masks_for_cut(tree: ClassTree, cut: LabelSet, blob_map: np.ndarray, blob_leaves: Sequence[int]) -> MaskPair:
    """Two-channel ground truth for one rendered patch at ``cut``."""
    check_fingerprint(tree, cut)
    lookup = cut.leaf_to_member(tree.n_leaves)
    blob_class = np.zeros(len(blob_leaves) + 1, dtype=np.int64)
    for i, leaf in enumerate(blob_leaves, start=1):
        blob_class[i] = lookup[leaf] + 1
    class_map = blob_class[blob_map]
    # blobs of uncovered leaves are drawn but stay unlabelled
    instance_map = np.where(class_map > 0, blob_map, 0)
    return MaskPair(instance_map, class_map)


@dataclass
class DatasetManifest:
    name: str
    cut: list[str]
    patch_size: int
    image_count: int
    seed: int
    tree: dict
    tree_fingerprint: str
    appearance: dict
    appearance_hash: str
    files: list[dict] = field(default_factory=list)
    format: str = MANIFEST_FORMAT

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        d = json.loads(text)
        if d.get("format") != MANIFEST_FORMAT:
            raise DataError(f"unsupported manifest format {d.get('format')!r}")
        return cls(**d)


def generate_dataset(
    tree: ClassTree,
    cut: LabelSet,
    appearance: AppearanceSpec,
    seed: int,
    n_images: int,
    patch_size: int,
    out_dir,
    name: str = "dataset",
) -> DatasetManifest:
    """Render ``n_images`` patches and write images, masks and manifest.json."""
    check_fingerprint(tree, cut)
    if patch_size % 4 or patch_size < 8:
        raise DataError(f"patch size must be a multiple of 4 and at least 8, got {patch_size}")
    if len(appearance.leaves) != tree.n_leaves:
        raise DataError(f"appearance describes {len(appearance.leaves)} leaves, tree has {tree.n_leaves}")
    if n_images < 1:
        raise DataError("need at least one image")
    rendered = [render_image(appearance, seed, i, patch_size) for i in range(n_images)]

    out = Path(out_dir)
    for sub in ("images", "instances", "classes"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    files = []
    for i, (image, blob_map, blob_leaves) in enumerate(rendered):
        pair = masks_for_cut(tree, cut, blob_map, blob_leaves)
        entry = {
            "image": f"images/{i:04d}.ppm",
            "instances": f"instances/{i:04d}.pgm",
            "classes": f"classes/{i:04d}.pgm",
        }
        write_ppm(out / entry["image"], image)
        write_pgm(out / entry["instances"], pair.instance_map, maxval=65535)
        write_pgm(out / entry["classes"], pair.class_map, maxval=255)
        files.append(entry)
    manifest = DatasetManifest(
        name=name,
        cut=list(cut.names),
        patch_size=patch_size,
        image_count=n_images,
        seed=int(seed),
        tree=tree.to_dict(),
        tree_fingerprint=tree.fingerprint,
        appearance=appearance.to_dict(),
        appearance_hash=appearance.hash,
        files=files,
    )
    (out / "manifest.json").write_text(manifest.to_json())
    return manifest


def split_indices(n: int, seed: int) -> dict[str, np.ndarray]:
    """70/15/15 split: train = floor(0.7 n), val = floor(0.15 n), test = rest."""
    order = np.random.default_rng(derive_seed(seed, "split")).permutation(n)
    n_train = int(np.floor(0.7 * n))
    n_val = int(np.floor(0.15 * n))
    return {
        "train": np.sort(order[:n_train]),
        "val": np.sort(order[n_train : n_train + n_val]),
        "test": np.sort(order[n_train + n_val :]),
    }


@dataclass
class Dataset:
    name: str
    tree: ClassTree
    cut: LabelSet
    images: np.ndarray  # N x H x W x 3 in [0, 1]
    masks: list[MaskPair]
    splits: dict[str, np.ndarray]
    manifest: DatasetManifest
    path: Optional[Path] = None

    def indices(self, split: str) -> np.ndarray:
        if split == "all":
            return np.arange(len(self.masks))
        if split not in self.splits:
            raise DataError(f"unknown split {split!r}; choose train, val, test or all")
        return self.splits[split]


def load_dataset(manifest_path) -> Dataset:
    path = Path(manifest_path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    manifest = DatasetManifest.from_json(path.read_text())
    try:
        tree = parse_hierarchy(json.dumps(manifest.tree))
    except HierarchyError as exc:
        raise DataError(f"{path}: bad embedded tree ({exc})") from None
    if tree.fingerprint != manifest.tree_fingerprint:
        raise DataError(f"{path}: tree fingerprint mismatch")
    try:
        cut = validate_cut(tree, manifest.cut)
    except HierarchyError as exc:
        raise DataError(f"{path}: invalid cut ({exc})") from None
    if len(manifest.files) != manifest.image_count:
        raise DataError(f"{path}: lists {len(manifest.files)} files but image_count is {manifest.image_count}")

    root = path.parent
    size = manifest.patch_size
    images = np.empty((manifest.image_count, size, size, 3))
    masks = []
    for i, entry in enumerate(manifest.files):
        arrays = {}
        for key in ("image", "instances", "classes"):
            fpath = root / entry[key]
            if not fpath.is_file():
                raise DataError(f"missing file {fpath}")
            try:
                arrays[key], _ = read_netpbm(fpath)
            except NetpbmError as exc:
                raise DataError(str(exc)) from None
            if arrays[key].shape[:2] != (size, size):
                raise DataError(f"{fpath}: size {arrays[key].shape[:2]} does not match patch size {size}")
        if arrays["image"].ndim != 3:
            raise DataError(f"{root / entry['image']}: expected an RGB image")
        if arrays["classes"].max(initial=0) > cut.m:
            raise DataError(f"{root / entry['classes']}: class value {arrays['classes'].max()} exceeds the {cut.m} cut members")
        pair = MaskPair(arrays["instances"], arrays["classes"])
        try:
            pair.validate()
        except ValueError as exc:
            raise DataError(f"{root / entry['instances']}: {exc}") from None
        images[i] = arrays["image"] / 255.0
        masks.append(pair)
    return Dataset(
        name=manifest.name,
        tree=tree,
        cut=cut,
        images=images,
        masks=masks,
        splits=split_indices(manifest.image_count, manifest.seed),
        manifest=manifest,
        path=path,
    )


# --- augmentation -----------------------------------------------------------

_RGB_TO_YIQ = np.array([[0.299, 0.587, 0.114], [0.596, -0.274, -0.322], [0.211, -0.523, 0.312]])
_YIQ_TO_RGB = np.linalg.inv(_RGB_TO_YIQ)


@dataclass(frozen=True)
class AugmentParams:
    rotations: int = 0  # quarter turns, counter-clockwise
    flip: bool = False  # left-right flip after rotation
    brightness: float = 1.0
    hue: float = 0.0  # radians in the YIQ chroma plane
    saturation: float = 1.0

    @property
    def is_identity(self) -> bool:
        return self == AugmentParams()


def draw_augmentation(seed: int) -> AugmentParams:
    """One of the 8 square symmetries; colour jitter on half of the draws."""
    rng = np.random.default_rng(seed)
    sym = int(rng.integers(8))
    if rng.random() < 0.5:
        return AugmentParams(rotations=sym % 4, flip=sym >= 4)
    return AugmentParams(
        rotations=sym % 4,
        flip=sym >= 4,
        brightness=float(rng.uniform(0.8, 1.2)),
        hue=float(rng.uniform(-0.25, 0.25)),
        saturation=float(rng.uniform(0.8, 1.2)),
    )


def _geometric(arr: np.ndarray, params: AugmentParams) -> np.ndarray:
    out = np.rot90(arr, params.rotations, axes=(0, 1))
    if params.flip:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def apply_augmentation(image: np.ndarray, masks: MaskPair, params: AugmentParams):
    if image.shape[0] != image.shape[1]:
        raise DataError(f"augmentation expects a square patch, got {image.shape[:2]}")
    if params.is_identity:
        return image.copy(), MaskPair(masks.instance_map.copy(), masks.class_map.copy())
    out = _geometric(image, params)
    if (params.brightness, params.hue, params.saturation) != (1.0, 0.0, 1.0):
        yiq = out @ _RGB_TO_YIQ.T
        c, s = np.cos(params.hue), np.sin(params.hue)
        rot = np.array([[c, -s], [s, c]]) * params.saturation
        yiq[..., 1:] = yiq[..., 1:] @ rot.T
        out = np.clip((yiq @ _YIQ_TO_RGB.T) * params.brightness, 0.0, 1.0)
    pair = MaskPair(_geometric(masks.instance_map, params), _geometric(masks.class_map, params))
    return out, pair


def augment(image: np.ndarray, masks: MaskPair, seed: int):
    return apply_augmentation(image, masks, draw_augmentation(seed))
