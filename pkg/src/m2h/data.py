"""Synthetic plane scenes with mutually consistent depth, normals, labels and edges, plus file IO.

Geometry is orthographic: pixel ``(row, col)`` sees the nearest of a set of
planes ``d = a*col + b*row + c`` (metres). Each plane's normal is
``(-a, -b, 1) / |.|``, exactly what forward differences of the depth map give
on the plane interior, with channel 0 tied to the column direction.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DatasetIOError

EDGE_DEPTH_STEP = 0.05  # metres; a larger 4-neighbour jump marks an edge
MAX_SLOPE = 0.04  # metres per pixel, below the edge step so plane interiors never count as edges
LIGHT = np.array([0.0, 0.0, 1.0])
FOG = 0.04  # per-metre attenuation of image brightness
NOISE = 0.02


@dataclass
class Scene:
    image: np.ndarray  # 3 x H x W float32 in [0, 1], multiples of 1/255
    depth: np.ndarray  # H x W float32 metres
    normals: np.ndarray  # 3 x H x W float32 unit
    labels: np.ndarray  # H x W uint8
    edges: np.ndarray  # H x W uint8 in {0, 1}

    @property
    def size(self) -> tuple[int, int]:
        return self.depth.shape

    def equals(self, other: "Scene") -> bool:
        return all(np.array_equal(getattr(self, k), getattr(other, k)) and
                   getattr(self, k).dtype == getattr(other, k).dtype
                   for k in ("image", "depth", "normals", "labels", "edges"))


def palette(num_classes: int) -> np.ndarray:
    """Fixed, well-separated RGB base colour per class (class 0 is a neutral grey)."""
    cols = [np.array([0.55, 0.55, 0.55])]
    for k in range(1, num_classes):
        hue = (k - 1) / max(1, num_classes - 1)
        h6 = hue * 6.0
        x = 1.0 - abs(h6 % 2.0 - 1.0)
        rgb = [(1, x, 0), (x, 1, 0), (0, 1, x), (0, x, 1), (x, 0, 1), (1, 0, x)][int(h6) % 6]
        cols.append(0.15 + 0.8 * np.array(rgb, dtype=np.float64))
    return np.stack(cols)


def plane_normal(a: float, b: float) -> np.ndarray:
    n = np.array([-a, -b, 1.0])
    return n / np.linalg.norm(n)


def _sample_plane(rng: np.random.Generator, lo: float, hi: float, rows: np.ndarray, cols: np.ndarray,
                  max_depth: float) -> tuple[float, float, float]:
    """Random plane whose depth over ``rows, cols`` stays within ``[lo, hi]``; resamples when it does not."""
    for _ in range(100):
        a, b = rng.uniform(-MAX_SLOPE, MAX_SLOPE, size=2)
        c = rng.uniform(lo, hi)
        d = a * cols + b * rows + c
        if d.min() >= max(0.2, lo - 1.0) and d.max() <= min(max_depth, hi + 1.0):
            return float(a), float(b), float(c)
    # flat fallback keeps generation total
    return 0.0, 0.0, float(0.5 * (lo + hi))


def compute_edges(labels: np.ndarray, depth: np.ndarray, step: float = EDGE_DEPTH_STEP) -> np.ndarray:
    """1 where any 4-neighbour has a different label or a depth jump above ``step``."""
    edge = np.zeros(labels.shape, dtype=bool)
    for axis in (0, 1):
        lab = np.diff(labels.astype(np.int64), axis=axis) != 0
        dep = np.abs(np.diff(depth.astype(np.float64), axis=axis)) > step
        jump = lab | dep
        lo = [slice(None)] * 2
        hi = [slice(None)] * 2
        lo[axis], hi[axis] = slice(0, -1), slice(1, None)
        edge[tuple(lo)] |= jump
        edge[tuple(hi)] |= jump
    return edge.astype(np.uint8)


def quantize_image(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round(x * 255.0), 0, 255).astype(np.uint8)


def dequantize_image(q: np.ndarray) -> np.ndarray:
    return q.astype(np.float32) / np.float32(255.0)


def generate_scene(seed: int, h: int = 64, w: int = 64, num_shapes: int = 4, num_classes: int = 4,
                   max_depth: float = 10.0) -> Scene:
    """Composite ``num_shapes`` rotated, depth-tilted rectangles over a background plane.

    Background pixels get label 0, each rectangle a random class in
    ``1..num_classes-1``. The image is the class colour times a per-shape
    albedo, Lambertian shading with a frontal light, depth fog and noise.
    """
    if h % 16 or w % 16 or h < 16 or w < 16:
        raise ConfigError(f"scene size {h}x{w} must be a positive multiple of 16")
    if num_classes < 2:
        raise ConfigError("num_classes must be >= 2")
    if num_shapes < 0:
        raise ConfigError("num_shapes must be >= 0")
    rng = np.random.default_rng(seed)
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    far = (0.6 * max_depth, 0.9 * max_depth)
    a, b, c = _sample_plane(rng, *far, rows, cols, max_depth)
    depth = a * cols + b * rows + c
    labels = np.zeros((h, w), dtype=np.uint8)
    normal = np.broadcast_to(plane_normal(a, b)[:, None, None], (3, h, w)).copy()
    albedo = np.ones((h, w))
    colours = palette(num_classes)
    base = np.broadcast_to(colours[0][:, None, None], (3, h, w)).copy()
    side = min(h, w)
    for _ in range(num_shapes):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        hh, hw = rng.uniform(0.1, 0.3, size=2) * side
        theta = rng.uniform(0, np.pi)
        u = (cols - cx) * np.cos(theta) + (rows - cy) * np.sin(theta)
        v = -(cols - cx) * np.sin(theta) + (rows - cy) * np.cos(theta)
        inside = (np.abs(u) <= hw) & (np.abs(v) <= hh)
        if not inside.any():
            continue
        pa, pb, pc = _sample_plane(rng, 0.15 * max_depth, 0.55 * max_depth, rows[inside], cols[inside],
                                   max_depth)
        plane = pa * cols + pb * rows + pc
        cls = int(rng.integers(1, num_classes))
        tint = rng.uniform(0.7, 1.0)
        front = inside & (plane < depth)
        depth[front] = plane[front]
        labels[front] = cls
        normal[:, front] = plane_normal(pa, pb)[:, None]
        albedo[front] = tint
        base[:, front] = colours[cls][:, None]
    shade = np.clip(np.tensordot(LIGHT, normal, axes=1), 0.0, 1.0)
    image = base * (albedo * shade * np.exp(-FOG * depth))[None]
    image = image + rng.normal(0.0, NOISE, size=image.shape)
    image = dequantize_image(quantize_image(image))
    depth32 = depth.astype(np.float32)
    edges = compute_edges(labels, depth32)
    return Scene(image, depth32, normal.astype(np.float32), labels, edges)


def interior_mask(scene_edges: np.ndarray) -> np.ndarray:
    """Pixels that are not edges and whose 4-neighbours are not edges either."""
    e = np.asarray(scene_edges).astype(bool)
    grown = e.copy()
    grown[1:] |= e[:-1]
    grown[:-1] |= e[1:]
    grown[:, 1:] |= e[:, :-1]
    grown[:, :-1] |= e[:, 1:]
    return ~grown


# ---------------------------------------------------------------------------
# PGM / PPM / PFM


def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as exc:
        raise DatasetIOError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _write_bytes(path: Path, data: bytes) -> None:
    try:
        path.write_bytes(data)
    except OSError as exc:
        raise DatasetIOError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _split_header(data: bytes, fields: int, path: Path) -> tuple[list[bytes], bytes]:
    """Whitespace-separated header tokens (comments skipped), then the payload after one whitespace byte."""
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < fields:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < len(data) and not data[i : i + 1].isspace():
            i += 1
        if start == i:
            raise DatasetIOError(f"truncated header in {path}")
        tokens.append(data[start:i])
    return tokens, data[i + 1 :]


def write_pnm(path: str | Path, array: np.ndarray) -> None:
    """8-bit PGM (``H x W``) or PPM (``3 x H x W``)."""
    a = np.asarray(array)
    if a.dtype != np.uint8:
        raise DatasetIOError(f"{path}: PNM payload must be uint8, got {a.dtype}")
    if a.ndim == 2:
        magic, h, w, payload = b"P5", a.shape[0], a.shape[1], a
    elif a.ndim == 3 and a.shape[0] == 3:
        magic, h, w, payload = b"P6", a.shape[1], a.shape[2], a.transpose(1, 2, 0)
    else:
        raise DatasetIOError(f"{path}: unsupported PNM array shape {a.shape}")
    _write_bytes(Path(path), magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(payload).tobytes())


def read_pnm(path: str | Path) -> np.ndarray:
    path = Path(path)
    data = _read_bytes(path)
    tokens, payload = _split_header(data, 4, path)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise DatasetIOError(f"{path}: not a binary PGM/PPM file")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise DatasetIOError(f"{path}: bad header") from exc
    if maxval != 255:
        raise DatasetIOError(f"{path}: only 8-bit files are supported")
    ch = 3 if magic == b"P6" else 1
    n = w * h * ch
    if len(payload) < n:
        raise DatasetIOError(f"{path}: payload truncated ({len(payload)} of {n} bytes)")
    arr = np.frombuffer(payload[:n], dtype=np.uint8).reshape(h, w, ch)
    return arr[..., 0].copy() if ch == 1 else arr.transpose(2, 0, 1).copy()


def write_pfm(path: str | Path, array: np.ndarray) -> None:
    """Little-endian PFM (scale -1); ``H x W`` -> ``Pf``, ``3 x H x W`` -> ``PF``. Rows stored bottom-up."""
    a = np.asarray(array, dtype=np.float32)
    if a.ndim == 2:
        magic, h, w, pix = b"Pf", a.shape[0], a.shape[1], a
    elif a.ndim == 3 and a.shape[0] == 3:
        magic, h, w, pix = b"PF", a.shape[1], a.shape[2], a.transpose(1, 2, 0)
    else:
        raise DatasetIOError(f"{path}: unsupported PFM array shape {a.shape}")
    body = np.ascontiguousarray(pix[::-1]).astype("<f4").tobytes()
    _write_bytes(Path(path), magic + f"\n{w} {h}\n-1.0\n".encode() + body)


def read_pfm(path: str | Path) -> np.ndarray:
    path = Path(path)
    data = _read_bytes(path)
    tokens, payload = _split_header(data, 4, path)
    magic = tokens[0]
    if magic not in (b"Pf", b"PF"):
        raise DatasetIOError(f"{path}: not a PFM file")
    try:
        w, h = int(tokens[1]), int(tokens[2])
        scale = float(tokens[3])
    except ValueError as exc:
        raise DatasetIOError(f"{path}: bad header") from exc
    ch = 3 if magic == b"PF" else 1
    n = w * h * ch * 4
    if len(payload) < n:
        raise DatasetIOError(f"{path}: payload truncated ({len(payload)} of {n} bytes)")
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(payload[:n], dtype=dtype).reshape(h, w, ch)[::-1].astype(np.float32)
    return arr[..., 0].copy() if ch == 1 else np.ascontiguousarray(arr.transpose(2, 0, 1))


# ---------------------------------------------------------------------------
# datasets on disk

INDEX_NAME = "index.csv"
INDEX_COLUMNS = ("id", "image", "depth", "normals", "labels", "edges")


def scene_files(scene_id: str) -> dict[str, str]:
    return {"image": f"{scene_id}_image.ppm", "depth": f"{scene_id}_depth.pfm",
            "normals": f"{scene_id}_normals.pfm", "labels": f"{scene_id}_labels.pgm",
            "edges": f"{scene_id}_edges.pgm"}


def save_scene(scene: Scene, root: str | Path, scene_id: str) -> dict[str, str]:
    """Write the five files of one scene under ``root``; returns the relative file names."""
    root = Path(root)
    files = scene_files(scene_id)
    write_pnm(root / files["image"], quantize_image(scene.image))
    write_pfm(root / files["depth"], scene.depth)
    write_pfm(root / files["normals"], scene.normals)
    write_pnm(root / files["labels"], scene.labels)
    write_pnm(root / files["edges"], scene.edges.astype(np.uint8) * 255)
    return files


def load_scene(root: str | Path, files: dict[str, str]) -> Scene:
    root = Path(root)
    image = dequantize_image(read_pnm(root / files["image"]))
    labels = read_pnm(root / files["labels"])
    edges = (read_pnm(root / files["edges"]) > 127).astype(np.uint8)
    depth = read_pfm(root / files["depth"])
    normals = read_pfm(root / files["normals"])
    if image.ndim != 3 or labels.ndim != 2 or normals.ndim != 3:
        raise DatasetIOError(f"{root}: scene files have wrong channel counts")
    shapes = {image.shape[1:], labels.shape, edges.shape, depth.shape, normals.shape[1:]}
    if len(shapes) != 1:
        raise DatasetIOError(f"{root}: scene files disagree on size: {sorted(shapes)}")
    return Scene(image, depth, normals, labels, edges)


def write_dataset(root: str | Path, scenes: Iterable[Scene], ids: Optional[Sequence[str]] = None) -> Path:
    """Save scenes and the index CSV; returns the index path."""
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetIOError(f"cannot create {root}: {exc.strerror or exc}") from exc
    rows = []
    for i, scene in enumerate(scenes):
        sid = ids[i] if ids is not None else f"{i:05d}"
        rows.append({"id": sid, **save_scene(scene, root, sid)})
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=INDEX_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    index = root / INDEX_NAME
    _write_bytes(index, buf.getvalue().encode())
    return index


def generate_dataset(root: str | Path, count: int, size: int = 64, num_classes: int = 4, seed: int = 0,
                     num_shapes: int = 4, max_depth: float = 10.0) -> Path:
    scenes = (generate_scene(seed + i, size, size, num_shapes, num_classes, max_depth) for i in range(count))
    return write_dataset(root, scenes)


def read_index(root: str | Path) -> list[dict[str, str]]:
    index = Path(root) / INDEX_NAME
    text = _read_bytes(index).decode()
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != INDEX_COLUMNS:
        raise DatasetIOError(f"{index}: expected columns {','.join(INDEX_COLUMNS)}")
    return list(reader)


class SceneDataset:
    """All scenes of a dataset directory, loaded eagerly into memory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.rows = read_index(self.root)
        self.scenes = [load_scene(self.root, row) for row in self.rows]

    @classmethod
    def from_scenes(cls, scenes: Sequence[Scene]) -> "SceneDataset":
        ds = cls.__new__(cls)
        ds.root = None
        ds.rows = [{"id": f"{i:05d}"} for i in range(len(scenes))]
        ds.scenes = list(scenes)
        return ds

    def __len__(self) -> int:
        return len(self.scenes)

    def __getitem__(self, i: int) -> Scene:
        return self.scenes[i]

    def batch(self, indices: Sequence[int]) -> dict[str, np.ndarray]:
        return collate([self.scenes[i] for i in indices])


def collate(scenes: Sequence[Scene]) -> dict[str, np.ndarray]:
    """Stack scenes into model-ready arrays (depth and edges get a channel axis)."""
    return {
        "image": np.stack([s.image for s in scenes]),
        "depth": np.stack([s.depth for s in scenes])[:, None],
        "normals": np.stack([s.normals for s in scenes]),
        "labels": np.stack([s.labels for s in scenes]).astype(np.int64),
        "edges": np.stack([s.edges for s in scenes])[:, None].astype(np.float32),
    }


def load_external_dataset(root: str | Path, name: str) -> None:
    """Placeholder for real benchmark archives; only documents the expected layout.

    NYUDv2 / Hypersim style datasets would be laid out as ``root/<split>/{rgb,depth,
    normals,semantic,edges}/<id>.<ext>``. Loading them is outside this package.
    """
    raise NotImplementedError(f"loading {name!r} from {root} is not supported; use generate_dataset")
