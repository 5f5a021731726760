"""Drawable primitives, their flat parameterisation, and distance queries.

Geometry lives in normalised canvas coordinates [0,1]^2 and is scaled by the
canvas dimensions at rasterisation time, so one model serves any resolution.
Distance queries and their gradients operate in whatever space the caller
supplies (the rasteriser uses pixels).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

from .errors import ValidationError

KINDS = ("point", "segment", "polyline", "catmullrom")

# Optimiser projection bounds: geometry may roam a little off-canvas and is
# clipped at export time; colours stay physical.
COORD_MIN, COORD_MAX = -0.25, 1.25

DEFAULT_SAMPLES_PER_SPAN = 8

_MIN_POINTS = {"point": 1, "segment": 2, "polyline": 2, "catmullrom": 4}
_EXACT_POINTS = {"point": 1, "segment": 2}


@dataclass
class Primitive:
    """One drawable element: geometry, softness radius, constant colour."""

    kind: str
    points: NDArray[np.float64]  # (n, 2) normalised coordinates
    sigma: float = 1.0  # soft-stroke radius, pixels
    colour: NDArray[np.float64] = field(default_factory=lambda: np.zeros(1))
    learn_geometry: bool = True
    learn_colour: bool = False

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        self.colour = np.atleast_1d(np.asarray(self.colour, dtype=np.float64))
        if self.kind not in KINDS:
            raise ValidationError(f"unknown primitive kind {self.kind!r}")
        n = self.points.shape[0]
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ValidationError(f"points must be (n, 2), got {self.points.shape}")
        if self.kind in _EXACT_POINTS and n != _EXACT_POINTS[self.kind]:
            raise ValidationError(f"{self.kind} needs exactly {_EXACT_POINTS[self.kind]} points, got {n}")
        if n < _MIN_POINTS[self.kind]:
            raise ValidationError(f"{self.kind} needs >= {_MIN_POINTS[self.kind]} points, got {n}")
        if not np.isfinite(self.points).all():
            raise ValidationError("primitive has non-finite coordinates")
        if self.sigma <= 0:
            raise ValidationError(f"sigma must be positive, got {self.sigma}")
        if self.colour.shape[0] not in (1, 3):
            raise ValidationError(f"colour must have 1 or 3 components, got {self.colour.shape}")
        if (self.colour < 0).any() or (self.colour > 1).any():
            raise ValidationError("colour components must lie in [0, 1]")

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def translated(self, delta) -> Primitive:
        return replace(self, points=self.points + np.asarray(delta, dtype=np.float64))


@dataclass
class SketchModel:
    """An ordered set of drawing strokes plus the canvas they target."""

    primitives: list[Primitive]
    canvas_w: int
    canvas_h: int
    background: NDArray[np.float64] = field(default_factory=lambda: np.ones(1))

    def __post_init__(self):
        self.background = np.atleast_1d(np.asarray(self.background, dtype=np.float64))
        if self.canvas_w < 1 or self.canvas_h < 1:
            raise ValidationError("canvas dimensions must be >= 1")
        if self.background.shape[0] not in (1, 3):
            raise ValidationError("background must have 1 or 3 components")
        for p in self.primitives:
            if p.colour.shape != self.background.shape:
                raise ValidationError(
                    "primitive colour channel count must match the model background"
                )

    @property
    def channels(self) -> int:
        return self.background.shape[0]

    def copy(self) -> SketchModel:
        return SketchModel(
            primitives=[replace(p, points=p.points.copy(), colour=p.colour.copy())
                        for p in self.primitives],
            canvas_w=self.canvas_w,
            canvas_h=self.canvas_h,
            background=self.background.copy(),
        )


@dataclass
class LayoutEntry:
    prim_index: int
    field_name: str  # "geometry" | "colour"
    offset: int
    length: int


@dataclass
class ParamVector:
    """Flat, ordered storage of every learnable scalar of a model."""

    values: NDArray[np.float64]
    layout: list[LayoutEntry]

    def __len__(self) -> int:
        return self.values.shape[0]


def pack(model: SketchModel) -> ParamVector:
    """Flatten learnable fields: primitives in list order; per primitive the
    geometry scalars (x then y per control point), then colour if learnable.
    width_sigma is never packed (annealed by schedule, not learned)."""
    chunks: list[np.ndarray] = []
    layout: list[LayoutEntry] = []
    offset = 0
    for i, prim in enumerate(model.primitives):
        if prim.learn_geometry:
            geo = prim.points.reshape(-1)
            layout.append(LayoutEntry(i, "geometry", offset, geo.size))
            chunks.append(geo)
            offset += geo.size
        if prim.learn_colour:
            layout.append(LayoutEntry(i, "colour", offset, prim.colour.size))
            chunks.append(prim.colour)
            offset += prim.colour.size
    values = np.concatenate(chunks) if chunks else np.zeros(0)
    return ParamVector(values=values.astype(np.float64, copy=True), layout=layout)


def unpack(pv: ParamVector, template: SketchModel) -> SketchModel:
    """Inverse of pack against a template model; coordinates clamp to
    [COORD_MIN, COORD_MAX] and colours to [0, 1]."""
    expect = pack(template)
    if len(expect) != len(pv):
        raise ValidationError(
            f"parameter vector length {len(pv)} does not match template ({len(expect)})"
        )
    model = template.copy()
    for entry in pv.layout:
        vals = pv.values[entry.offset : entry.offset + entry.length]
        prim = model.primitives[entry.prim_index]
        if entry.field_name == "geometry":
            prim.points = np.clip(vals.reshape(-1, 2), COORD_MIN, COORD_MAX)
        else:
            prim.colour = np.clip(vals.copy(), 0.0, 1.0)
    return model


def clamp_params(values: NDArray[np.float64], layout: list[LayoutEntry]) -> NDArray[np.float64]:
    """Project a raw parameter vector onto the feasible box."""
    out = values.copy()
    for entry in layout:
        sl = slice(entry.offset, entry.offset + entry.length)
        if entry.field_name == "geometry":
            np.clip(out[sl], COORD_MIN, COORD_MAX, out=out[sl])
        else:
            np.clip(out[sl], 0.0, 1.0, out=out[sl])
    return out


def closest_point_segment(p, a, b) -> tuple[NDArray[np.float64], float]:
    """Closest point q on segment ab to p, with its parameter t in [0, 1].

    t = clamp(((p-a).(b-a)) / |b-a|^2, 0, 1); a degenerate segment
    (|b-a|^2 < 1e-12) collapses to t=0, q=a.
    """
    p = np.asarray(p, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    u = b - a
    uu = float(u @ u)
    if uu < 1e-12:
        return a.copy(), 0.0
    t = float(np.clip(((p - a) @ u) / uu, 0.0, 1.0))
    return a + t * u, t


def segment_query(points: NDArray[np.float64], a, b) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Vectorised squared distance and clamp parameter from many points to
    one segment. Returns (d2, t), each shaped like points[..., 0]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    u = b - a
    uu = float(u @ u)
    w = points - a
    if uu < 1e-12:
        d2 = np.einsum("...k,...k->...", w, w)
        return d2, np.zeros_like(d2)
    t = np.clip((w @ u) / uu, 0.0, 1.0)
    diff = w - t[..., None] * u
    d2 = np.einsum("...k,...k->...", diff, diff)
    return d2, t


def catmull_rom_basis(n_ctrl: int, samples_per_span: int) -> NDArray[np.float64]:
    """Sampling matrix B (m x n_ctrl) for a uniform Catmull-Rom chain:
    sampled_polyline = B @ controls. Rows cover each interior span at
    t = k/samples_per_span with shared span endpoints emitted once."""
    if n_ctrl < 4:
        raise ValidationError(f"Catmull-Rom needs >= 4 control points, got {n_ctrl}")
    if samples_per_span < 1:
        raise ValidationError("samples_per_span must be >= 1")
    spans = n_ctrl - 3
    rows = []
    for s in range(spans):
        k0 = 0 if s == 0 else 1
        for k in range(k0, samples_per_span + 1):
            t = k / samples_per_span
            t2, t3 = t * t, t * t * t
            w = np.zeros(n_ctrl)
            w[s + 0] = 0.5 * (-t + 2 * t2 - t3)
            w[s + 1] = 0.5 * (2 - 5 * t2 + 3 * t3)
            w[s + 2] = 0.5 * (t + 4 * t2 - 3 * t3)
            w[s + 3] = 0.5 * (-t2 + t3)
            rows.append(w)
    return np.array(rows)


def spline_to_polyline(ctrl, samples_per_span: int = DEFAULT_SAMPLES_PER_SPAN) -> NDArray[np.float64]:
    """Sample a uniform Catmull-Rom chain to a polyline; consecutive
    duplicate points are merged."""
    ctrl = np.atleast_2d(np.asarray(ctrl, dtype=np.float64))
    basis = catmull_rom_basis(ctrl.shape[0], samples_per_span)
    poly = basis @ ctrl
    keep = np.ones(poly.shape[0], dtype=bool)
    keep[1:] = np.any(poly[1:] != poly[:-1], axis=1)
    return poly[keep]


def primitive_polyline(prim: Primitive, samples_per_span: int = DEFAULT_SAMPLES_PER_SPAN
                       ) -> tuple[NDArray[np.float64], NDArray[np.float64] | None]:
    """Geometry a distance query runs against: (polyline_points, basis).

    basis is None except for splines, where polyline = basis @ control points
    and gradients flow back through basis.T.
    """
    if prim.kind == "catmullrom":
        basis = catmull_rom_basis(prim.n_points, samples_per_span)
        return basis @ prim.points, basis
    return prim.points, None


def distance_and_grad(p, prim: Primitive,
                      samples_per_span: int = DEFAULT_SAMPLES_PER_SPAN
                      ) -> tuple[float, NDArray[np.float64]]:
    """Squared distance from p to a primitive and its gradient with respect
    to the primitive's control coordinates (same units as p).

    The gradient flows through the segment attaining the minimum (lowest
    segment index on ties). For interior t the envelope theorem applies:
    d(p,q(t)) is stationary in t at the minimiser, so
    dd2/da = -2(1-t)(p-q) and dd2/db = -2t(p-q) hold for clamped and
    interior t alike. Spline gradients reach the controls through the fixed
    sampling basis.
    """
    p = np.asarray(p, dtype=np.float64)
    if prim.kind == "point":
        c = prim.points[0]
        diff = p - c
        d2 = float(diff @ diff)
        return d2, (-2.0 * diff)[None, :]

    poly, basis = primitive_polyline(prim, samples_per_span)
    n_seg = poly.shape[0] - 1
    best_d2, best_t, best_i = np.inf, 0.0, 0
    for i in range(n_seg):
        d2_i, t_i = segment_query(p[None, :], poly[i], poly[i + 1])
        if d2_i[0] < best_d2:
            best_d2, best_t, best_i = float(d2_i[0]), float(t_i[0]), i
    a, b = poly[best_i], poly[best_i + 1]
    q = a + best_t * (b - a)
    diff = p - q
    g_poly = np.zeros_like(poly)
    g_poly[best_i] += -2.0 * (1.0 - best_t) * diff
    g_poly[best_i + 1] += -2.0 * best_t * diff
    if basis is None:
        return best_d2, g_poly
    return best_d2, basis.T @ g_poly


# --- JSON interchange -------------------------------------------------------
# {canvas: {w,h}, primitives: [{kind, points, sigma, colour, learn_geo,
# learn_col}]}; "background" is written only when it differs from white.

def model_to_json(model: SketchModel) -> str:
    doc: dict = {
        "canvas": {"w": model.canvas_w, "h": model.canvas_h},
        "primitives": [
            {
                "kind": p.kind,
                "points": [[float(x), float(y)] for x, y in p.points],
                "sigma": float(p.sigma),
                "colour": [float(c) for c in p.colour],
                "learn_geo": bool(p.learn_geometry),
                "learn_col": bool(p.learn_colour),
            }
            for p in model.primitives
        ],
    }
    if not np.all(model.background == 1.0):
        doc["background"] = [float(c) for c in model.background]
    return json.dumps(doc, indent=1)


def model_from_json(text: str) -> SketchModel:
    try:
        doc = json.loads(text)
        canvas = doc["canvas"]
        prims = [
            Primitive(
                kind=rec["kind"],
                points=np.array(rec["points"], dtype=np.float64),
                sigma=float(rec["sigma"]),
                colour=np.array(rec["colour"], dtype=np.float64),
                learn_geometry=bool(rec["learn_geo"]),
                learn_colour=bool(rec["learn_col"]),
            )
            for rec in doc["primitives"]
        ]
        channels = prims[0].colour.shape[0] if prims else 1
        background = np.array(doc.get("background", [1.0] * channels), dtype=np.float64)
        return SketchModel(
            primitives=prims,
            canvas_w=int(canvas["w"]),
            canvas_h=int(canvas["h"]),
            background=background,
        )
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"malformed model JSON: {exc}") from exc
