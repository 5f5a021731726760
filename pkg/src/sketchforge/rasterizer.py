"""Differentiable soft rasterisation of a SketchModel.

Each primitive covers a pixel with alpha = exp(-d^2 / (2 sigma^2)) of its
squared distance field, truncated to exactly zero beyond aa_truncate_px.
Two compositing modes:

* darken_min  - grayscale ink-on-paper: every pixel keeps the darkest
  contribution min_k(1 - alpha_k * ink_k) against the background, with
  ink = 1 - colour. Order-invariant.
* soft_over   - front-to-back over-compositing in list order:
  C = sum_k alpha_k T_{k-1} colour_k + T_N background, T_k = prod(1-alpha_j).

The forward pass records a tape (per-primitive pixel window, squared
distances, winning segment index and clamp parameter) from which the
backward pass replays compositing and routes gradients to control points
and colours without re-searching geometry.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .canvas import Canvas
from .errors import ValidationError
from .primitives import ParamVector, Primitive, SketchModel, pack, primitive_polyline

COMPOSE_MODES = ("darken_min", "soft_over")


@dataclass
class RasterConfig:
    sigma_px: float
    compose: str = "darken_min"
    aa_truncate_px: float | None = None  # None -> 4 * sigma_px
    threads: int = 1
    samples_per_span: int = 8

    def __post_init__(self):
        if self.sigma_px <= 0:
            raise ValidationError(f"sigma_px must be positive, got {self.sigma_px}")
        if self.compose not in COMPOSE_MODES:
            raise ValidationError(f"compose must be one of {COMPOSE_MODES}")
        if self.aa_truncate_px is None:
            self.aa_truncate_px = 4.0 * self.sigma_px
        if self.aa_truncate_px < self.sigma_px:
            raise ValidationError("aa_truncate_px must be >= sigma_px")
        if self.threads < 1:
            self.threads = 1


@dataclass
class _PrimRecord:
    """Distance-field window of one primitive: everything the backward pass
    needs to replay compositing and differentiate without a geometry search."""

    index: int
    iy0: int
    ix0: int
    d2: NDArray[np.float64]  # (wh, ww)
    seg: NDArray[np.int32]  # winning segment index per pixel
    t: NDArray[np.float64]  # clamp parameter on the winning segment
    pts_px: NDArray[np.float64]  # sampled polyline in pixel space
    basis: NDArray[np.float64] | None  # spline sampling matrix, else None
    trans_before: NDArray[np.float64] | None = None  # T_{k-1}, soft_over only

    @property
    def empty(self) -> bool:
        return self.d2.size == 0


@dataclass
class RasterTape:
    model: SketchModel
    cfg: RasterConfig
    records: list[_PrimRecord]
    canvas: Canvas
    winner: NDArray[np.int32] | None  # darken_min: index of the achieving primitive, -1 = background


def _pixel_window(pts: NDArray[np.float64], radius: float, w: int, h: int):
    """Index ranges of pixels whose centres may see a contribution."""
    xmin, ymin = pts.min(axis=0) - radius
    xmax, ymax = pts.max(axis=0) + radius
    ix0 = max(int(np.ceil(xmin - 0.5)), 0)
    ix1 = min(int(np.floor(xmax - 0.5)), w - 1)
    iy0 = max(int(np.ceil(ymin - 0.5)), 0)
    iy1 = min(int(np.floor(ymax - 0.5)), h - 1)
    return ix0, ix1, iy0, iy1


def _distance_record(index: int, prim: Primitive, w: int, h: int, cfg: RasterConfig) -> _PrimRecord:
    scale = np.array([w, h], dtype=np.float64)
    if prim.kind == "catmullrom":
        basis = None
        pts, basis = primitive_polyline(prim, cfg.samples_per_span)
        pts = pts * scale
    else:
        pts = prim.points * scale
        basis = None
    ix0, ix1, iy0, iy1 = _pixel_window(pts, cfg.aa_truncate_px, w, h)
    if ix1 < ix0 or iy1 < iy0:
        z = np.zeros((0, 0))
        return _PrimRecord(index, 0, 0, z, z.astype(np.int32), z, pts, basis)
    xs = np.arange(ix0, ix1 + 1, dtype=np.float64) + 0.5
    ys = np.arange(iy0, iy1 + 1, dtype=np.float64) + 0.5
    grid = np.stack(np.meshgrid(xs, ys), axis=-1)  # (wh, ww, 2)

    if prim.kind == "point":
        diff = grid - pts[0]
        d2 = np.einsum("...k,...k->...", diff, diff)
        seg = np.zeros(d2.shape, dtype=np.int32)
        t = np.zeros_like(d2)
        return _PrimRecord(index, iy0, ix0, d2, seg, t, pts, basis)

    d2 = np.full(grid.shape[:2], np.inf)
    seg = np.zeros(grid.shape[:2], dtype=np.int32)
    t = np.zeros(grid.shape[:2])
    flat = grid.reshape(-1, 2)
    for j in range(pts.shape[0] - 1):
        a, b = pts[j], pts[j + 1]
        u = b - a
        uu = float(u @ u)
        wvec = flat - a
        if uu < 1e-12:
            tj = np.zeros(flat.shape[0])
            diff = wvec
        else:
            tj = np.clip((wvec @ u) / uu, 0.0, 1.0)
            diff = wvec - tj[:, None] * u
        d2j = np.einsum("ij,ij->i", diff, diff).reshape(d2.shape)
        tj = tj.reshape(d2.shape)
        better = d2j < d2  # strict: ties keep the lowest segment index
        d2[better] = d2j[better]
        seg[better] = j
        t[better] = tj[better]
    return _PrimRecord(index, iy0, ix0, d2, seg, t, pts, basis)


def _alpha(rec: _PrimRecord, cfg: RasterConfig) -> NDArray[np.float64]:
    a = np.exp(-rec.d2 / (2.0 * cfg.sigma_px**2))
    a[rec.d2 > cfg.aa_truncate_px**2] = 0.0
    return a


def _window(rec: _PrimRecord):
    h, w = rec.d2.shape
    return slice(rec.iy0, rec.iy0 + h), slice(rec.ix0, rec.ix0 + w)


def _compose(model: SketchModel, cfg: RasterConfig, records: list[_PrimRecord]
             ) -> tuple[Canvas, NDArray[np.int32] | None]:
    w, h, c = model.canvas_w, model.canvas_h, model.channels
    if cfg.compose == "darken_min":
        if c != 1:
            raise ValidationError("darken_min composition requires 1-channel colours")
        out = np.full((h, w), float(model.background[0]))
        winner = np.full((h, w), -1, dtype=np.int32)
        for rec in records:
            if rec.empty:
                continue
            ink = 1.0 - float(model.primitives[rec.index].colour[0])
            v = 1.0 - _alpha(rec, cfg) * ink
            sl = _window(rec)
            better = v < out[sl]
            out[sl][better] = v[better]
            winner[sl][better] = rec.index
        return Canvas(np.clip(out, 0.0, 1.0)[:, :, None]), winner

    out = np.zeros((h, w, c))
    trans = np.ones((h, w))
    for rec in records:
        if rec.empty:
            rec.trans_before = np.zeros((0, 0))
            continue
        sl = _window(rec)
        a = _alpha(rec, cfg)
        rec.trans_before = trans[sl].copy()
        colour = model.primitives[rec.index].colour
        out[sl] += (a * rec.trans_before)[:, :, None] * colour
        trans[sl] *= 1.0 - a
    out += trans[:, :, None] * model.background
    return Canvas(np.clip(out, 0.0, 1.0)), None


def rasterize(model: SketchModel, cfg: RasterConfig) -> tuple[Canvas, RasterTape]:
    """Forward soft rasterisation. Deterministic: records are composed in
    primitive list order regardless of how many threads computed them."""
    if not model.primitives:
        raise ValidationError("cannot rasterise an empty model")
    w, h = model.canvas_w, model.canvas_h

    def job(i: int) -> _PrimRecord:
        return _distance_record(i, model.primitives[i], w, h, cfg)

    if cfg.threads > 1 and len(model.primitives) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            records = list(pool.map(job, range(len(model.primitives))))
    else:
        records = [job(i) for i in range(len(model.primitives))]

    canvas, winner = _compose(model, cfg, records)
    return canvas, RasterTape(model=model, cfg=cfg, records=records, canvas=canvas, winner=winner)


def replay(tape: RasterTape) -> Canvas:
    """Recompose the forward canvas from the tape's stored distance fields."""
    canvas, _ = _compose(tape.model, tape.cfg, tape.records)
    return canvas


def rasterize_backward(tape: RasterTape, dL_dimage: NDArray[np.float64]) -> NDArray[np.float64]:
    """Map an upstream image gradient to a pack()-ordered parameter gradient.

    darken_min: only the primitive achieving the per-pixel minimum receives
    gradient (background-achieving pixels route nowhere). soft_over: every
    contributing primitive receives gradient through its alpha and colour;
    the behind-composite B_k needed for dC/dalpha_k = T_{k-1} (colour_k - B_k)
    is rebuilt in a back-to-front sweep. Truncated pixels contribute zero.
    """
    model, cfg = tape.model, tape.cfg
    w, h, c = model.canvas_w, model.canvas_h, model.channels
    dL = np.asarray(dL_dimage, dtype=np.float64)
    if dL.ndim == 2:
        dL = dL[:, :, None]
    if dL.shape != (h, w, c):
        raise ValidationError(f"gradient shape {dL.shape} does not match canvas {(h, w, c)}")
    if not np.isfinite(dL).all():
        raise ValidationError("image gradient contains non-finite values")

    two_sigma2 = 2.0 * cfg.sigma_px**2
    geo_grads: dict[int, NDArray[np.float64]] = {}
    col_grads: dict[int, NDArray[np.float64]] = {}

    def apply_geometry(rec: _PrimRecord, mask: NDArray[np.bool_], dd2: NDArray[np.float64]):
        """Scatter dL/dd2 onto the record's polyline points via the winning
        segment, then through the spline basis if present."""
        prim = model.primitives[rec.index]
        ys, xs = np.nonzero(mask)
        if ys.size == 0:
            return
        px = np.stack([xs + rec.ix0 + 0.5, ys + rec.iy0 + 0.5], axis=1)
        g = dd2[ys, xs]
        gpts = np.zeros_like(rec.pts_px)
        if prim.kind == "point":
            diff = px - rec.pts_px[0]
            gpts[0] = (-2.0 * diff * g[:, None]).sum(axis=0)
        else:
            segi = rec.seg[ys, xs]
            ti = rec.t[ys, xs]
            a = rec.pts_px[segi]
            b = rec.pts_px[segi + 1]
            q = a + ti[:, None] * (b - a)
            diff = px - q
            ga = -2.0 * (1.0 - ti)[:, None] * diff * g[:, None]
            gb = -2.0 * ti[:, None] * diff * g[:, None]
            np.add.at(gpts, segi, ga)
            np.add.at(gpts, segi + 1, gb)
        if rec.basis is not None:
            gpts = rec.basis.T @ gpts
        # pixel-space -> normalised coordinates
        gpts = gpts * np.array([w, h], dtype=np.float64)
        geo_grads[rec.index] = geo_grads.get(rec.index, 0.0) + gpts

    if cfg.compose == "darken_min":
        winner = tape.winner
        dimg = dL[:, :, 0]
        for rec in tape.records:
            if rec.empty:
                continue
            sl = _window(rec)
            mask = winner[sl] == rec.index
            if not mask.any():
                continue
            prim = model.primitives[rec.index]
            ink = 1.0 - float(prim.colour[0])
            a = _alpha(rec, cfg)
            dv = np.zeros_like(rec.d2)
            dv[mask] = dimg[sl][mask]
            if prim.learn_colour:
                col_grads[rec.index] = col_grads.get(rec.index, 0.0) + np.array(
                    [(a[mask] * dv[mask]).sum()]
                )
            if prim.learn_geometry:
                dalpha = -ink * dv
                dd2 = dalpha * (-a / two_sigma2)
                apply_geometry(rec, mask, dd2)
    else:
        behind = np.broadcast_to(model.background, (h, w, c)).copy()
        for rec in reversed(tape.records):
            if rec.empty:
                continue
            prim = model.primitives[rec.index]
            sl = _window(rec)
            a = _alpha(rec, cfg)
            mask = a > 0.0
            dwin = dL[sl]
            if prim.learn_colour:
                weight = a * rec.trans_before
                col_grads[rec.index] = col_grads.get(rec.index, 0.0) + np.einsum(
                    "yx,yxc->c", weight, dwin
                )
            if prim.learn_geometry and mask.any():
                dalpha = rec.trans_before * np.einsum(
                    "yxc,yxc->yx", dwin, prim.colour - behind[sl]
                )
                dd2 = dalpha * (-a / two_sigma2)
                apply_geometry(rec, mask, dd2)
            behind[sl] = a[:, :, None] * prim.colour + (1.0 - a)[:, :, None] * behind[sl]

    # assemble in pack() order
    pv = pack(model)
    grad = np.zeros(len(pv))
    for entry in pv.layout:
        if entry.field_name == "geometry":
            g = geo_grads.get(entry.prim_index)
            if g is not None:
                grad[entry.offset : entry.offset + entry.length] = np.asarray(g).reshape(-1)
        else:
            g = col_grads.get(entry.prim_index)
            if g is not None:
                grad[entry.offset : entry.offset + entry.length] = np.asarray(g)
    return grad
