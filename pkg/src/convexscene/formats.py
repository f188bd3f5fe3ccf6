"""File codecs: PFM rasters, CVXM id maps, PNG images, scene and edit JSON.

PFM follows the usual convention: identifier line ("Pf" grayscale, "PF"
3-channel, plus a "PF2" extension for 2-channel correspondence rasters),
dimensions, a scale line whose sign encodes endianness (always -1.0 =
little-endian here), and float32 rows stored bottom-to-top.

CVXM is a raw primitive-id raster: 8-byte header (magic "CVXM", u16 width,
u16 height, little-endian) followed by row-major int32 values.

Scene JSON is versioned; floats are written with 9 significant digits, and
readers accept any finite float. Normals are re-normalized on load (with a
warning) if a file carries non-unit ones.
"""

from __future__ import annotations

import json
import logging
import struct
from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics, RigidTransform
from .errors import ValidationError
from .geometry import ConvexPrimitive, HalfPlane, Scene

log = logging.getLogger(__name__)

SCENE_SCHEMA_VERSION = 1
REPORT_SCHEMA_VERSION = 1

_PFM_CHANNELS = {b"Pf": 1, b"PF2": 2, b"PF": 3}
_PFM_IDENT = {1: b"Pf", 2: b"PF2", 3: b"PF"}


# ---------------------------------------------------------------------------
# PFM


def write_pfm(path, data: np.ndarray) -> None:
    data = np.asarray(data)
    if data.ndim == 2:
        data = data[:, :, None]
    if data.ndim != 3 or data.shape[2] not in _PFM_IDENT:
        raise ValidationError(f"PFM supports 1/2/3 channels, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ValidationError("refusing to write non-finite values to PFM")
    h, w, c = data.shape
    payload = np.ascontiguousarray(data[::-1], dtype="<f4")  # bottom-up rows
    with open(path, "wb") as f:
        f.write(_PFM_IDENT[c] + b"\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(payload.tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        ident = _read_token_line(f)
        if ident not in _PFM_CHANNELS:
            raise ValidationError(f"not a PFM file: identifier {ident!r}")
        channels = _PFM_CHANNELS[ident]
        dims = _read_token_line(f).split()
        if len(dims) != 2:
            raise ValidationError("malformed PFM dimensions line")
        w, h = int(dims[0]), int(dims[1])
        if w <= 0 or h <= 0:
            raise ValidationError("PFM dimensions must be positive")
        scale = float(_read_token_line(f))
        if scale >= 0:
            raise ValidationError("only little-endian PFM (negative scale) is supported")
        raw = f.read(4 * w * h * channels)
    if len(raw) != 4 * w * h * channels:
        raise ValidationError("PFM payload truncated")
    data = np.frombuffer(raw, dtype="<f4").reshape(h, w, channels)[::-1]
    if not np.all(np.isfinite(data)):
        raise ValidationError("PFM payload contains non-finite values")
    return data[:, :, 0].copy() if channels == 1 else data.copy()


def _read_token_line(f) -> bytes:
    buf = b""
    while True:
        ch = f.read(1)
        if not ch:
            raise ValidationError("unexpected end of PFM header")
        if ch == b"\n":
            return buf
        buf += ch


# ---------------------------------------------------------------------------
# CVXM


CVXM_MAGIC = b"CVXM"


def write_cvxm(path, ids: np.ndarray) -> None:
    ids = np.asarray(ids)
    if ids.ndim != 2:
        raise ValidationError("convex map must be 2-D")
    h, w = ids.shape
    if w >= 1 << 16 or h >= 1 << 16:
        raise ValidationError("CVXM dimensions exceed u16")
    with open(path, "wb") as f:
        f.write(CVXM_MAGIC)
        f.write(struct.pack("<HH", w, h))
        f.write(np.ascontiguousarray(ids, dtype="<i4").tobytes())


def read_cvxm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(8)
        if len(header) != 8 or header[:4] != CVXM_MAGIC:
            raise ValidationError("not a CVXM file")
        w, h = struct.unpack("<HH", header[4:])
        raw = f.read()
    if len(raw) != 4 * w * h:
        raise ValidationError("CVXM payload does not match header dimensions")
    return np.frombuffer(raw, dtype="<i4").reshape(h, w).copy()


# ---------------------------------------------------------------------------
# PNG (8-bit, values mapped linearly to [0, 1])


def write_png(path, img: np.ndarray) -> None:
    from PIL import Image

    img = np.asarray(img)
    if img.ndim == 3 and img.shape[0] in (1, 3) and img.shape[0] < img.shape[2]:
        img = np.moveaxis(img, 0, -1)  # CHW -> HWC
    if img.ndim == 2:
        mode = "L"
    elif img.ndim == 3 and img.shape[2] == 3:
        mode = "RGB"
    else:
        raise ValidationError(f"unsupported PNG shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValidationError("refusing to write non-finite values to PNG")
    quant = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(quant.squeeze(), mode=mode).save(path, format="PNG")


def read_png(path, chw: bool = True) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.moveaxis(arr, -1, 0) if chw else arr


# ---------------------------------------------------------------------------
# JSON helpers


def _f9(x: float) -> float:
    """Quantize to 9 significant digits for stable, readable JSON."""
    return float(f"{float(x):.9g}")


def _f9_list(values) -> list[float]:
    return [_f9(v) for v in np.asarray(values, dtype=np.float64).ravel()]


def dump_json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=False) + "\n").encode()


# ---------------------------------------------------------------------------
# scene JSON


def scene_to_dict(scene: Scene) -> dict:
    cam = scene.camera
    return {
        "version": SCENE_SCHEMA_VERSION,
        "camera": {"fx": _f9(cam.fx), "fy": _f9(cam.fy), "cx": _f9(cam.cx),
                   "cy": _f9(cam.cy), "width": cam.width, "height": cam.height},
        "pose": {"R": _f9_list(scene.pose.rotation), "t": _f9_list(scene.pose.translation)},
        "primitives": [
            {
                "planes": [_f9_list(np.concatenate([p.normal, [p.offset]]))
                           for p in prim.planes],
                "delta": _f9(prim.delta),
                "sigma": _f9(prim.sigma),
                "center": _f9_list(prim.center),
                "live": bool(scene.live[i]),
            }
            for i, prim in enumerate(scene.primitives)
        ],
    }


def scene_from_dict(doc: dict) -> Scene:
    try:
        version = doc["version"]
        if version != SCENE_SCHEMA_VERSION:
            raise ValidationError(f"unsupported scene version {version}")
        c = doc["camera"]
        cam = CameraIntrinsics(float(c["fx"]), float(c["fy"]), float(c["cx"]),
                               float(c["cy"]), int(c["width"]), int(c["height"]))
        pose = RigidTransform(np.array(doc["pose"]["R"], dtype=np.float64).reshape(3, 3),
                              np.array(doc["pose"]["t"], dtype=np.float64))
        prims, live = [], []
        for entry in doc["primitives"]:
            planes = []
            for row in entry["planes"]:
                n = np.array(row[:3], dtype=np.float64)
                norm = np.linalg.norm(n)
                if abs(norm - 1.0) > 1e-6:
                    log.warning("non-unit normal in scene file; re-normalizing")
                planes.append(HalfPlane(n, float(row[3])))
            prims.append(ConvexPrimitive(tuple(planes), float(entry["delta"]),
                                         float(entry["sigma"]),
                                         np.array(entry["center"], dtype=np.float64)))
            live.append(bool(entry.get("live", True)))
        return Scene(tuple(prims), cam, pose, tuple(live))
    except (KeyError, TypeError, IndexError) as exc:
        raise ValidationError(f"malformed scene JSON: {exc}") from exc


def scene_to_json_bytes(scene: Scene) -> bytes:
    return dump_json_bytes(scene_to_dict(scene))


def write_scene_json(path, scene: Scene) -> None:
    Path(path).write_bytes(scene_to_json_bytes(scene))


def read_scene_json(path) -> Scene:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON in {path}: {exc}") from exc
    return scene_from_dict(doc)


# ---------------------------------------------------------------------------
# camera JSON


def write_camera_json(path, cam: CameraIntrinsics) -> None:
    Path(path).write_bytes(dump_json_bytes(
        {"fx": _f9(cam.fx), "fy": _f9(cam.fy), "cx": _f9(cam.cx), "cy": _f9(cam.cy),
         "width": cam.width, "height": cam.height}))


def read_camera_dict(doc: dict) -> CameraIntrinsics:
    try:
        return CameraIntrinsics(float(doc["fx"]), float(doc["fy"]), float(doc["cx"]),
                                float(doc["cy"]), int(doc["width"]), int(doc["height"]))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed camera document: {exc}") from exc


def read_camera_json(path) -> CameraIntrinsics:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed camera JSON {path}: {exc}") from exc
    return read_camera_dict(doc)


# ---------------------------------------------------------------------------
# edit scripts


def parse_edit_script(doc) -> tuple[list[dict], RigidTransform | None]:
    """Accepts either a bare transform list or {"transforms": [...],
    "camera_delta": {R, t}}. Returns (transform dicts, camera delta or None)."""
    if isinstance(doc, list):
        entries, delta = doc, None
    elif isinstance(doc, dict):
        entries = doc.get("transforms", [])
        delta = doc.get("camera_delta")
    else:
        raise ValidationError("edit script must be a list or an object")
    if delta is not None:
        delta = RigidTransform(np.array(delta["R"], dtype=np.float64).reshape(3, 3),
                               np.array(delta["t"], dtype=np.float64))
    out = []
    for entry in entries:
        if "primitive_id" not in entry:
            raise ValidationError("every transform needs a primitive_id")
        out.append(entry)
    return out, delta


def read_edit_script(path) -> tuple[list[dict], RigidTransform | None]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON in {path}: {exc}") from exc
    return parse_edit_script(doc)
