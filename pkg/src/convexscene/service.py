"""Local HTTP service for session-based scene editing.

Sessions hold a source scene and an append-only transform log; the current
scene is always the replay of the log prefix addressed by the latest
revision, so undo is a new revision pointing at a shorter prefix and
revisions only ever grow. Writers race through a compare-and-set on the
base revision (409 on mismatch). Everything the service computes is also
available through the CLI; it adds no new math.
"""

from __future__ import annotations

import base64
import binascii
import io
import json
import secrets
import tempfile
import threading
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from . import figures, formats, hints
from .camera import DepthMap, RigidTransform
from .editing import PrimitiveTransform, apply_edits, compose_transforms, correspond
from .errors import ValidationError
from .fitting import FitConfig, fit, normalize_depth
from .geometry import Scene
from .render import RenderProduct, render_scene

PREVIEW_MAX_SIDE = 512


@dataclass
class Session:
    source: Scene
    log: list[tuple[list[PrimitiveTransform], RigidTransform | None]] = field(
        default_factory=list)
    prefixes: list[int] = field(default_factory=lambda: [0])
    renders: dict[int, RenderProduct] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def revision(self) -> int:
        return len(self.prefixes) - 1

    def scene_at(self, rev: int) -> Scene:
        scene = self.source
        for batch, delta in self.log[: self.prefixes[rev]]:
            scene = apply_edits(scene, {t.primitive_id: t for t in batch}, delta)
        return scene

    def net_transforms(self, rev: int) -> tuple[dict[int, PrimitiveTransform],
                                                RigidTransform | None]:
        merged: dict[int, PrimitiveTransform] = {}
        delta: RigidTransform | None = None
        for batch, d in self.log[: self.prefixes[rev]]:
            for t in batch:
                if t.primitive_id in merged:
                    merged[t.primitive_id] = compose_transforms(
                        merged[t.primitive_id], t)
                else:
                    merged[t.primitive_id] = t
            if d is not None:
                delta = d if delta is None else delta.compose(d)
        return merged, delta


def create_app() -> FastAPI:
    app = FastAPI(title="convexscene edit service")
    sessions: dict[str, Session] = {}
    registry_lock = threading.Lock()

    def get_session(session_id: str) -> Session | None:
        with registry_lock:
            return sessions.get(session_id)

    @app.exception_handler(ValidationError)
    async def _validation_handler(request: Request, exc: ValidationError):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.post("/sessions")
    async def create_session(request: Request):
        doc = await request.json()
        if "scene" in doc:
            scene = formats.scene_from_dict(doc["scene"])
        elif "depth_pfm_b64" in doc:
            try:
                raw = base64.b64decode(doc["depth_pfm_b64"], validate=True)
            except (binascii.Error, ValueError) as exc:
                raise ValidationError(f"bad depth payload: {exc}") from exc
            with tempfile.NamedTemporaryFile(suffix=".pfm") as tmp:
                tmp.write(raw)
                tmp.flush()
                depth = DepthMap(formats.read_pfm(tmp.name))
            cam_doc = doc.get("camera")
            if cam_doc is None:
                raise ValidationError("fitting needs a camera")
            cam = formats.read_camera_dict(cam_doc)
            depth, _ = normalize_depth(depth)
            cfg = FitConfig(k=int(doc.get("k", 12)),
                            steps=int(doc.get("steps", 300)),
                            seed=int(doc.get("seed", 0)))
            scene, _report = fit(depth, cam, cfg)
        else:
            raise ValidationError("provide either a scene or depth + camera")
        session_id = secrets.token_hex(8)
        with registry_lock:
            sessions[session_id] = Session(source=scene)
        return {"session_id": session_id, "revision": 0,
                "primitive_count": scene.k}

    @app.get("/sessions/{session_id}/scene")
    async def get_scene(session_id: str, rev: int | None = None):
        session = get_session(session_id)
        if session is None:
            return JSONResponse(status_code=404, content={"detail": "unknown session"})
        with session.lock:
            revision = session.revision if rev is None else rev
            if not 0 <= revision <= session.revision:
                return JSONResponse(status_code=404,
                                    content={"detail": "unknown revision"})
            scene = session.scene_at(revision)
        return Response(content=formats.scene_to_json_bytes(scene),
                        media_type="application/json",
                        headers={"X-Revision": str(revision)})

    @app.post("/sessions/{session_id}/transforms")
    async def post_transforms(session_id: str, request: Request):
        session = get_session(session_id)
        if session is None:
            return JSONResponse(status_code=404, content={"detail": "unknown session"})
        doc = await request.json()
        base_rev = doc.get("base_revision")
        records = [PrimitiveTransform.from_dict(entry)
                   for entry in doc.get("transforms", [])]
        delta = None
        if doc.get("camera_delta") is not None:
            d = doc["camera_delta"]
            delta = RigidTransform(np.array(d["R"], dtype=np.float64).reshape(3, 3),
                                   np.array(d["t"], dtype=np.float64))
        if not records and delta is None:
            raise ValidationError("empty transform batch")
        with session.lock:
            if base_rev is not None and int(base_rev) != session.revision:
                return JSONResponse(
                    status_code=409,
                    content={"detail": "revision conflict",
                             "revision": session.revision})
            scene = session.scene_at(session.revision)
            # validate against the current scene before committing
            apply_edits(scene, {t.primitive_id: t for t in records}, delta)
            session.log = session.log[: session.prefixes[session.revision]]
            session.log.append((records, delta))
            session.prefixes.append(len(session.log))
            return {"revision": session.revision}

    @app.post("/sessions/{session_id}/undo")
    async def undo(session_id: str):
        session = get_session(session_id)
        if session is None:
            return JSONResponse(status_code=404, content={"detail": "unknown session"})
        with session.lock:
            prefix = session.prefixes[session.revision]
            if prefix == 0:
                raise ValidationError("nothing to undo")
            session.prefixes.append(prefix - 1)
            return {"revision": session.revision}

    @app.get("/sessions/{session_id}/render")
    async def render(session_id: str, kind: str = "depth", rev: int | None = None,
                     format: str = "png", full: int = 0):
        session = get_session(session_id)
        if session is None:
            return JSONResponse(status_code=404, content={"detail": "unknown session"})
        if kind not in ("depth", "convex", "points"):
            raise ValidationError(f"unknown render kind {kind!r}")
        if format not in ("png", "pfm", "cvxm"):
            raise ValidationError(f"unknown render format {format!r}")
        if format == "cvxm" and kind != "convex":
            raise ValidationError("cvxm format applies to the convex map only")
        with session.lock:
            revision = session.revision if rev is None else rev
            if not 0 <= revision <= session.revision:
                return JSONResponse(status_code=404,
                                    content={"detail": "unknown revision"})
            product = session.renders.get(revision)
            if product is None:
                product = render_scene(session.scene_at(revision))
                session.renders[revision] = product
        return _raster_response(product, kind, format, bool(full))

    @app.post("/sessions/{session_id}/hint")
    async def hint(session_id: str, request: Request):
        session = get_session(session_id)
        if session is None:
            return JSONResponse(status_code=404, content={"detail": "unknown session"})
        body = await request.body()
        if not body:
            raise ValidationError("request body must be a PNG image")
        with tempfile.NamedTemporaryFile(suffix=".png") as tmp:
            tmp.write(body)
            tmp.flush()
            try:
                src_img = formats.read_png(tmp.name)
            except Exception as exc:
                raise ValidationError(f"unreadable PNG body: {exc}") from exc
        with session.lock:
            revision = session.revision
            src_product = session.renders.get(0)
            if src_product is None:
                src_product = render_scene(session.scene_at(0))
                session.renders[0] = src_product
            dst_product = session.renders.get(revision)
            if dst_product is None:
                dst_product = render_scene(session.scene_at(revision))
                session.renders[revision] = dst_product
            transforms, _delta = session.net_transforms(revision)
            centers = [p.center for p in session.source.primitives]
        corr = correspond(src_product, dst_product, transforms, centers)
        package = hints.build_hint_package(
            src_img, corr, hit_mask=(~dst_product.hit_mask()).astype(np.int8))
        return Response(content=_package_zip(package, corr),
                        media_type="application/zip",
                        headers={"X-Revision": str(revision)})

    return app


def _downscale(arr: np.ndarray, full: bool) -> np.ndarray:
    if full:
        return arr
    side = max(arr.shape[0], arr.shape[1])
    if side <= PREVIEW_MAX_SIDE:
        return arr
    step = -(-side // PREVIEW_MAX_SIDE)  # ceil division
    return arr[::step, ::step]


def _raster_response(product: RenderProduct, kind: str, format: str,
                     full: bool) -> Response:
    import tempfile as _tf

    if format == "cvxm":
        with _tf.NamedTemporaryFile(suffix=".cvxm") as tmp:
            formats.write_cvxm(tmp.name, _downscale(product.convex_map, full))
            data = Path(tmp.name).read_bytes()
        return Response(content=data, media_type="application/x-cvxm")

    if format == "pfm":
        raster = {"depth": product.depth.values, "convex": None,
                  "points": product.points}[kind]
        if kind == "convex":
            raster = product.convex_map.astype(np.float32)
        with _tf.NamedTemporaryFile(suffix=".pfm") as tmp:
            formats.write_pfm(tmp.name, _downscale(raster, full))
            data = Path(tmp.name).read_bytes()
        return Response(content=data, media_type="application/x-pfm")

    if kind == "depth":
        img = figures.depth_preview(product.depth.values)
    elif kind == "convex":
        img = figures.convex_preview(product.convex_map)
    else:
        img = figures.points_preview(product.points, product.hit_mask())
    with _tf.NamedTemporaryFile(suffix=".png") as tmp:
        formats.write_png(tmp.name, _downscale(img, full))
        data = Path(tmp.name).read_bytes()
    return Response(content=data, media_type="image/png")


def _package_zip(package: hints.HintPackage, corr) -> bytes:
    buf = io.BytesIO()
    stamp = (1980, 1, 1, 0, 0, 0)  # fixed entry times keep archives reproducible

    def add(zf, name, writer):
        with tempfile.NamedTemporaryFile() as tmp:
            writer(tmp.name)
            data = Path(tmp.name).read_bytes()
        info = zipfile.ZipInfo(name, date_time=stamp)
        zf.writestr(info, data)

    with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
        add(zf, "hint.png", lambda p: formats.write_png(p, package.hint))
        add(zf, "hint_inpainted.png", lambda p: formats.write_png(p, package.inpainted))
        add(zf, "mask.pfm", lambda p: formats.write_pfm(p, package.mask.values))
        add(zf, "mask.png", lambda p: formats.write_png(p, package.mask.values))
        add(zf, "correspondence.R.pfm", lambda p: formats.write_pfm(p, corr.R))
        add(zf, "correspondence.W.pfm", lambda p: formats.write_pfm(p, corr.W))
        info = zipfile.ZipInfo("manifest.json", date_time=stamp)
        zf.writestr(info, json.dumps({"schema_version": formats.REPORT_SCHEMA_VERSION,
                                      "contents": ["hint.png", "hint_inpainted.png",
                                                   "mask.pfm", "mask.png",
                                                   "correspondence.R.pfm",
                                                   "correspondence.W.pfm"]},
                                     indent=2))
    return buf.getvalue()
