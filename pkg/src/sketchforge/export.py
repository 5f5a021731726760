"""Physical outputs: travel-ordered toolpaths, G-code, and SVG.

Normalised model coordinates map to the largest aspect-preserving rectangle
inside the bed margins, with the image top at maximum bed Y (the bed's Y
axis grows away from the operator). Off-canvas geometry is clipped to the
canvas rectangle. Pen actuation uses Z moves so the output runs on any
GRBL-style gantry.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import GcodeParseError, ValidationError
from .primitives import Primitive, SketchModel, catmull_rom_basis

ORDER_ALGORITHMS = ("identity", "greedy_nn", "greedy_2opt")

PLUNGE_FEED = 500.0
_EPS = 1e-9


@dataclass
class Stroke:
    polyline: NDArray[np.float64]  # (n, 2) mm
    reversed: bool = False
    pen_id: int = 0

    def __post_init__(self):
        self.polyline = np.atleast_2d(np.asarray(self.polyline, dtype=np.float64))
        if self.polyline.shape[0] < 1 or self.polyline.shape[1] != 2:
            raise ValidationError("stroke polyline must be (n>=1, 2)")

    def path(self) -> NDArray[np.float64]:
        """The polyline in traversal order."""
        return self.polyline[::-1] if self.reversed else self.polyline

    @property
    def entry(self) -> NDArray[np.float64]:
        return self.path()[0]

    @property
    def exit(self) -> NDArray[np.float64]:
        return self.path()[-1]


@dataclass
class Toolpath:
    strokes: list[Stroke]
    bed_w_mm: float
    bed_h_mm: float
    margin_mm: float = 0.0

    def validate(self) -> None:
        lo = self.margin_mm - 1e-6
        hix = self.bed_w_mm - self.margin_mm + 1e-6
        hiy = self.bed_h_mm - self.margin_mm + 1e-6
        for i, s in enumerate(self.strokes):
            p = s.polyline
            if (p[:, 0] < lo).any() or (p[:, 0] > hix).any() \
                    or (p[:, 1] < lo).any() or (p[:, 1] > hiy).any():
                raise ValidationError(f"stroke {i} leaves the printable area")


def pen_up_travel(tp: Toolpath, start=(0.0, 0.0)) -> float:
    """Total pen-up distance: from start to the first stroke, then between
    consecutive strokes (orientation-aware). The final home move is not
    counted; ordering algorithms optimise exactly this quantity."""
    pos = np.asarray(start, dtype=np.float64)
    total = 0.0
    for s in tp.strokes:
        total += float(np.hypot(*(s.entry - pos)))
        pos = s.exit
    return total


def pen_down_length(tp: Toolpath) -> float:
    total = 0.0
    for s in tp.strokes:
        d = np.diff(s.polyline, axis=0)
        total += float(np.hypot(d[:, 0], d[:, 1]).sum())
    return total


# --- model -> toolpath ------------------------------------------------------

def _clip_segment(p0, p1, rect) -> tuple[NDArray[np.float64], NDArray[np.float64]] | None:
    """Liang-Barsky clip of segment p0->p1 against rect (xmin,ymin,xmax,ymax)."""
    xmin, ymin, xmax, ymax = rect
    d = p1 - p0
    t0, t1 = 0.0, 1.0
    for p, q in (
        (-d[0], p0[0] - xmin),
        (d[0], xmax - p0[0]),
        (-d[1], p0[1] - ymin),
        (d[1], ymax - p0[1]),
    ):
        if abs(p) < 1e-15:
            if q < 0:
                return None
            continue
        r = q / p
        if p < 0:
            if r > t1:
                return None
            t0 = max(t0, r)
        else:
            if r < t0:
                return None
            t1 = min(t1, r)
    if t0 > t1:
        return None
    return p0 + t0 * d, p0 + t1 * d


def _clip_polyline(pts: NDArray[np.float64], rect) -> list[NDArray[np.float64]]:
    """Clip a polyline to a rectangle; exits split it into multiple runs."""
    if pts.shape[0] == 1:
        xmin, ymin, xmax, ymax = rect
        x, y = pts[0]
        if xmin - _EPS <= x <= xmax + _EPS and ymin - _EPS <= y <= ymax + _EPS:
            return [pts.copy()]
        return []
    runs: list[list[np.ndarray]] = []
    current: list[np.ndarray] = []
    for i in range(pts.shape[0] - 1):
        clipped = _clip_segment(pts[i], pts[i + 1], rect)
        if clipped is None:
            if current:
                runs.append(current)
                current = []
            continue
        q0, q1 = clipped
        if current and np.allclose(current[-1], q0, atol=1e-9):
            if not np.allclose(current[-1], q1, atol=1e-12):
                current.append(q1)
        else:
            if current:
                runs.append(current)
            current = [q0, q1] if not np.allclose(q0, q1, atol=1e-12) else [q0]
    if current:
        runs.append(current)
    return [np.array(r) for r in runs if r]


def _flatten_spline_mm(ctrl_mm: NDArray[np.float64], tol_mm: float) -> NDArray[np.float64]:
    """Sample a Catmull-Rom chain, doubling the per-span sampling rate until
    every chord's midpoint sags less than tol_mm from the true curve."""
    n = ctrl_mm.shape[0]
    samples = 1
    while samples < 4096:
        basis = catmull_rom_basis(n, 2 * samples)  # double rate: odd rows are midpoints
        dense = basis @ ctrl_mm
        coarse = dense[::2]
        mids = dense[1::2]
        chord_mid = 0.5 * (coarse[:-1] + coarse[1:])
        sag = np.hypot(*(mids - chord_mid).T)
        if sag.size == 0 or sag.max() < tol_mm:
            return coarse
        samples *= 2
    return coarse


def model_to_toolpath(model: SketchModel, bed_w_mm: float, bed_h_mm: float,
                      margin_mm: float = 0.0, flatten_tol_mm: float = 0.05) -> Toolpath:
    """Map a model into bed coordinates: aspect-preserving fit inside the
    margins, image top at max bed Y; splines flattened to flatten_tol_mm;
    geometry clipped to the canvas rectangle; points become dots."""
    if bed_w_mm <= 2 * margin_mm or bed_h_mm <= 2 * margin_mm:
        raise ValidationError(
            f"bed {bed_w_mm}x{bed_h_mm} mm cannot hold margin {margin_mm} mm"
        )
    if margin_mm < 0:
        raise ValidationError("margin must be non-negative")
    avail_w = bed_w_mm - 2 * margin_mm
    avail_h = bed_h_mm - 2 * margin_mm
    scale = min(avail_w / model.canvas_w, avail_h / model.canvas_h)
    rect_w = scale * model.canvas_w
    rect_h = scale * model.canvas_h
    ox = margin_mm + (avail_w - rect_w) / 2.0
    oy = margin_mm + (avail_h - rect_h) / 2.0

    def to_mm(pts: NDArray[np.float64]) -> NDArray[np.float64]:
        out = np.empty_like(pts)
        out[:, 0] = ox + pts[:, 0] * rect_w
        out[:, 1] = oy + (1.0 - pts[:, 1]) * rect_h  # image top -> max bed Y
        return out

    rect = (ox, oy, ox + rect_w, oy + rect_h)
    strokes: list[Stroke] = []
    for prim in model.primitives:
        if prim.kind == "point":
            for run in _clip_polyline(to_mm(prim.points), rect):
                strokes.append(Stroke(polyline=run))
            continue
        if prim.kind == "catmullrom":
            pts_mm = _flatten_spline_mm(to_mm(prim.points), flatten_tol_mm)
        else:
            pts_mm = to_mm(prim.points)
        for run in _clip_polyline(pts_mm, rect):
            strokes.append(Stroke(polyline=run))
    tp = Toolpath(strokes=strokes, bed_w_mm=bed_w_mm, bed_h_mm=bed_h_mm, margin_mm=margin_mm)
    tp.validate()
    return tp


# --- stroke ordering --------------------------------------------------------

def _endpoint_arrays(strokes: list[Stroke]) -> tuple[NDArray, NDArray]:
    entries = np.array([s.entry for s in strokes]) if strokes else np.zeros((0, 2))
    exits = np.array([s.exit for s in strokes]) if strokes else np.zeros((0, 2))
    return entries, exits


def _greedy_nn(strokes: list[Stroke]) -> list[Stroke]:
    n = len(strokes)
    starts = np.array([s.polyline[0] for s in strokes])
    ends = np.array([s.polyline[-1] for s in strokes])
    remaining = np.ones(n, dtype=bool)
    pos = np.zeros(2)
    ordered: list[Stroke] = []
    for _ in range(n):
        ds = np.hypot(starts[:, 0] - pos[0], starts[:, 1] - pos[1])
        de = np.hypot(ends[:, 0] - pos[0], ends[:, 1] - pos[1])
        best = np.minimum(ds, de)
        best[~remaining] = np.inf
        k = int(np.argmin(best))  # ties: lowest stroke index
        use_reverse = de[k] < ds[k]  # tie prefers forward entry
        s = strokes[k]
        ordered.append(Stroke(polyline=s.polyline, reversed=bool(use_reverse), pen_id=s.pen_id))
        remaining[k] = False
        pos = ends[k] if not use_reverse else starts[k]
    return ordered


def _travel_of(entries, exits) -> float:
    pos = np.zeros(2)
    total = 0.0
    for e, x in zip(entries, exits):
        total += float(np.hypot(*(e - pos)))
        pos = x
    return total


def _dist(a, b) -> NDArray:
    return np.hypot(a[..., 0] - b[..., 0], a[..., 1] - b[..., 1])


class _TourState:
    """Mutable (order, orientation) tour with entry/exit endpoint arrays."""

    def __init__(self, strokes: list[Stroke]):
        self.starts = np.array([s.polyline[0] for s in strokes])
        self.ends = np.array([s.polyline[-1] for s in strokes])
        self.order = list(range(len(strokes)))
        self.flip = [bool(s.reversed) for s in strokes]
        self.refresh()

    def refresh(self) -> None:
        idx = np.array(self.order, dtype=np.intp)
        flip = np.array(self.flip, dtype=bool)[:, None]
        self.E = np.where(flip, self.ends[idx], self.starts[idx])
        self.X = np.where(flip, self.starts[idx], self.ends[idx])

    def travel(self) -> float:
        prev = np.vstack([np.zeros(2), self.X[:-1]])
        return float(_dist(prev, self.E).sum())

    def snapshot(self):
        return list(self.order), list(self.flip)

    def restore(self, snap) -> None:
        self.order, self.flip = list(snap[0]), list(snap[1])
        self.refresh()


def _best_move(st: _TourState):
    """Scan the combined neighbourhood for the best strictly improving move:
    2-opt block reversal with orientation flip (i == j is a single-stroke
    reversal), plain adjacent transposition, and or-opt relocation of 1-3
    stroke blocks in either orientation. Deterministic lowest-index
    tie-break via fixed enumeration order."""
    n = len(st.order)
    E, X = st.E, st.X
    origin = np.zeros(2)
    prevX = np.vstack([origin, X[:-1]])
    link_in = _dist(prevX, E)  # cost of each position's incoming pen-up link
    link_after = np.zeros(n)
    link_after[: n - 1] = _dist(X[: n - 1], E[1:])
    best_delta = -1e-12
    best_move = None

    for i in range(n):
        d_prev_xj = _dist(prevX[i][None, :], X[i:])
        d_ei_next = np.zeros(n - i)
        if i < n - 1:
            d_ei_next[: n - 1 - i] = _dist(E[i][None, :], E[i + 1 :])
        delta = d_prev_xj + d_ei_next - link_in[i] - link_after[i:]
        j_rel = int(np.argmin(delta))
        if delta[j_rel] < best_delta:
            best_delta = float(delta[j_rel])
            best_move = ("rev", i, i + j_rel, False)

    for i in range(n - 1):
        old = link_in[i] + link_after[i]
        new = float(np.hypot(*(E[i + 1] - prevX[i]))) + float(np.hypot(*(E[i] - X[i + 1])))
        if i + 2 < n:
            old += link_after[i + 1]
            new += float(np.hypot(*(E[i + 2] - X[i])))
        if new - old < best_delta:
            best_delta = new - old
            best_move = ("swap", i, i + 1, False)

    for blk in (1, 2, 3):
        if blk >= n:
            break
        for flip in (False, True):
            for i in range(n - blk + 1):
                last = i + blk - 1
                bridge = float(np.hypot(*(E[last + 1] - prevX[i]))) if last + 1 < n else 0.0
                removal = bridge - link_in[i] - link_after[last]
                entry_b = X[last] if flip else E[i]
                exit_b = E[i] if flip else X[last]
                keep = np.ones(n, dtype=bool)
                keep[i : last + 1] = False
                E_r, X_r = E[keep], X[keep]
                m = n - blk
                pred = np.vstack([origin, X_r])  # (m+1, 2)
                add = _dist(pred, entry_b[None, :])
                old_link = np.zeros(m + 1)
                if m:
                    add[:m] += _dist(exit_b[None, :], E_r)
                    old_link[:m] = _dist(pred[:m], E_r)
                delta = removal + add - old_link
                j = int(np.argmin(delta))
                if delta[j] < best_delta:
                    best_delta = float(delta[j])
                    best_move = ("oropt", i, j, (blk, flip))
    return best_delta, best_move


def _apply_move(st: _TourState, move) -> None:
    kind, i, j, extra = move
    if kind == "rev":
        st.order[i : j + 1] = st.order[i : j + 1][::-1]
        st.flip[i : j + 1] = [not f for f in st.flip[i : j + 1]][::-1]
    elif kind == "swap":
        st.order[i], st.order[j] = st.order[j], st.order[i]
        st.flip[i], st.flip[j] = st.flip[j], st.flip[i]
    else:
        blk, flip = extra
        block = list(zip(st.order[i : i + blk], st.flip[i : i + blk]))
        del st.order[i : i + blk]
        del st.flip[i : i + blk]
        if flip:
            block = [(o, not f) for o, f in block][::-1]
        st.order[j:j] = [o for o, _ in block]
        st.flip[j:j] = [f for _, f in block]
    st.refresh()


def _descend(st: _TourState, budget: list[int]) -> None:
    while budget[0] > 0:
        _, move = _best_move(st)
        if move is None:
            return
        _apply_move(st, move)
        budget[0] -= 1


def _double_bridge(order: list, flip: list, k: int) -> tuple[list, list]:
    """Deterministic 4-segment reshuffle used to escape local optima."""
    n = len(order)
    a = 1 + (k % (n - 3))
    b = a + 1 + ((k // 7) % (n - a - 2))
    c = b + 1 + ((k // 3) % (n - b - 1))
    new_order = order[:a] + order[b:c] + order[a:b] + order[c:]
    new_flip = flip[:a] + flip[b:c] + flip[a:b] + flip[c:]
    return new_order, new_flip


_KICKS = 24
_KICK_MAX_N = 64


def _two_opt(strokes: list[Stroke], move_budget: int) -> list[Stroke]:
    """Local search over (order, orientation) from the greedy tour, with
    deterministic double-bridge restarts on small instances. Stops at a
    local optimum of the combined neighbourhood or when the accepted-move
    budget runs out; always returns the best tour visited."""
    n = len(strokes)
    if n < 2:
        return list(strokes)
    st = _TourState(strokes)
    budget = [move_budget]
    _descend(st, budget)
    best = st.snapshot()
    best_cost = st.travel()
    if 4 <= n <= _KICK_MAX_N:
        for k in range(_KICKS):
            if budget[0] <= 0:
                break
            st.restore(best)
            st.order, st.flip = _double_bridge(st.order, st.flip, k)
            st.refresh()
            budget[0] -= 1
            _descend(st, budget)
            cost = st.travel()
            if cost < best_cost - 1e-12:
                best, best_cost = st.snapshot(), cost
    st.restore(best)
    out = []
    for pos in range(n):
        src = strokes[st.order[pos]]
        out.append(Stroke(polyline=src.polyline, reversed=st.flip[pos], pen_id=src.pen_id))
    return out


def order_strokes(tp: Toolpath, algorithm: str = "greedy_nn") -> Toolpath:
    """Reorder (and possibly reverse) strokes to cut pen-up travel. Only the
    order and per-stroke reversal flags change; geometry is untouched."""
    if algorithm not in ORDER_ALGORITHMS:
        raise ValidationError(f"algorithm must be one of {ORDER_ALGORITHMS}")
    if algorithm == "identity" or len(tp.strokes) <= 1:
        strokes = [Stroke(polyline=s.polyline, reversed=s.reversed, pen_id=s.pen_id)
                   for s in tp.strokes]
        return Toolpath(strokes=strokes, bed_w_mm=tp.bed_w_mm, bed_h_mm=tp.bed_h_mm,
                        margin_mm=tp.margin_mm)
    ordered = _greedy_nn(tp.strokes)
    if algorithm == "greedy_2opt":
        ordered = _two_opt(ordered, move_budget=50 * len(ordered))
    return Toolpath(strokes=ordered, bed_w_mm=tp.bed_w_mm, bed_h_mm=tp.bed_h_mm,
                    margin_mm=tp.margin_mm)


# --- G-code -----------------------------------------------------------------

@dataclass
class GcodeStats:
    pen_down_mm: float
    pen_up_mm: float
    command_count: int


@dataclass
class GcodeProgram:
    lines: list[str]
    stats: GcodeStats

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"


def _fmt(v: float) -> str:
    s = f"{v:.3f}"
    return "0.000" if s == "-0.000" else s


def toolpath_to_gcode(tp: Toolpath, feed_draw_mm_min: float = 1500.0,
                      feed_travel_mm_min: float = 3000.0, pen_up_z: float = 5.0,
                      pen_down_z: float = 0.0) -> GcodeProgram:
    """Emit the GRBL-subset program: G21/G90 preamble, per stroke a rapid to
    its first point, a Z plunge, feed moves along the polyline, and a Z lift;
    postamble lifts and returns home. feed_travel_mm_min is accepted for API
    symmetry but rapids carry no feed word in this dialect.
    """
    if feed_draw_mm_min <= 0 or feed_travel_mm_min <= 0:
        raise ValidationError("feed rates must be positive")
    if pen_up_z <= pen_down_z:
        raise ValidationError("pen_up_z must exceed pen_down_z")

    def check(v: float, hi: float, axis: str) -> float:
        q = float(_fmt(v))
        if q < -1e-9 or q > hi + 1e-9:
            raise ValidationError(f"{axis} coordinate {q} outside bed [0, {hi}]")
        return q

    lines = ["G21", "G90", f"G0 Z{_fmt(pen_up_z)}"]
    pos = np.zeros(2)
    pen_down_mm = 0.0
    pen_up_mm = 0.0
    for s in tp.strokes:
        path = s.path()
        x0 = check(path[0, 0], tp.bed_w_mm, "X")
        y0 = check(path[0, 1], tp.bed_h_mm, "Y")
        lines.append(f"G0 X{_fmt(x0)} Y{_fmt(y0)}")
        pen_up_mm += math.hypot(x0 - pos[0], y0 - pos[1])
        pos = np.array([x0, y0])
        lines.append(f"G1 Z{_fmt(pen_down_z)} F{_fmt(PLUNGE_FEED)}")
        for p in path[1:]:
            x = check(p[0], tp.bed_w_mm, "X")
            y = check(p[1], tp.bed_h_mm, "Y")
            lines.append(f"G1 X{_fmt(x)} Y{_fmt(y)} F{_fmt(feed_draw_mm_min)}")
            pen_down_mm += math.hypot(x - pos[0], y - pos[1])
            pos = np.array([x, y])
        lines.append(f"G0 Z{_fmt(pen_up_z)}")
    lines.append(f"G0 Z{_fmt(pen_up_z)}")
    lines.append("G0 X0.000 Y0.000")
    pen_up_mm += math.hypot(pos[0], pos[1])
    stats = GcodeStats(pen_down_mm=pen_down_mm, pen_up_mm=pen_up_mm,
                       command_count=len(lines))
    return GcodeProgram(lines=lines, stats=stats)


_WORD_RE = re.compile(r"^([XYZF])(-?\d+(?:\.\d+)?)$")


def simulate_gcode(prog: GcodeProgram) -> Toolpath:
    """Replay a program into pen-down polylines (the emitter's round-trip
    oracle). Supports exactly the emitted subset: G21, G90, G0/G1 with
    X/Y/Z/F words, absolute mm. The first Z seen defines the pen-up height;
    any lower Z is pen-down."""
    x = y = 0.0
    z: float | None = None
    pen_up_ref: float | None = None
    pen_down = False
    strokes: list[NDArray[np.float64]] = []
    current: list[list[float]] | None = None

    for line_no, raw in enumerate(prog.lines, start=1):
        line = raw.strip()
        if not line:
            continue
        tokens = line.split()
        cmd = tokens[0]
        if cmd in ("G21", "G90"):
            if len(tokens) > 1:
                raise GcodeParseError(line_no, f"unexpected arguments after {cmd}")
            continue
        if cmd not in ("G0", "G1"):
            raise GcodeParseError(line_no, f"unknown command {cmd!r}")
        nx, ny, nz = x, y, z
        for tok in tokens[1:]:
            m = _WORD_RE.match(tok)
            if not m:
                raise GcodeParseError(line_no, f"malformed word {tok!r}")
            letter, value = m.group(1), float(m.group(2))
            if letter == "X":
                nx = value
            elif letter == "Y":
                ny = value
            elif letter == "Z":
                nz = value
        if nz is not None and pen_up_ref is None:
            pen_up_ref = nz
        was_down = pen_down
        pen_down = pen_up_ref is not None and nz is not None and nz < pen_up_ref - 1e-9
        moved_xy = (nx != x) or (ny != y)
        if pen_down and not was_down:
            current = [[nx, ny]]
        elif pen_down and moved_xy:
            if current is None:
                current = [[x, y]]
            current.append([nx, ny])
        elif was_down and not pen_down:
            if current:
                strokes.append(np.array(current))
            current = None
        x, y, z = nx, ny, nz
    if current:
        strokes.append(np.array(current))

    pts = np.concatenate(strokes) if strokes else np.zeros((0, 2))
    bed_w = float(pts[:, 0].max()) if pts.size else 0.0
    bed_h = float(pts[:, 1].max()) if pts.size else 0.0
    return Toolpath(strokes=[Stroke(polyline=p) for p in strokes],
                    bed_w_mm=max(bed_w, 1.0), bed_h_mm=max(bed_h, 1.0), margin_mm=0.0)


# --- SVG --------------------------------------------------------------------

def _svg_colour(colour: NDArray[np.float64]) -> str:
    if colour.shape[0] == 1:
        r = g = b = int(round(float(colour[0]) * 255))
    else:
        r, g, b = (int(round(float(c) * 255)) for c in colour)
    return f"rgb({r},{g},{b})"


def model_to_svg(model: SketchModel, width_mm: float, height_mm: float) -> str:
    """One drawable element per primitive: circles for points, paths for
    everything else. Stroke width approximates the soft kernel's visible
    width (2 sigma) at export scale."""
    mm_per_px = width_mm / model.canvas_w
    sx, sy = width_mm, height_mm
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width_mm}mm" '
        f'height="{height_mm}mm" viewBox="0 0 {width_mm} {height_mm}">',
    ]
    for prim in model.primitives:
        colour = _svg_colour(prim.colour)
        width = 2.0 * prim.sigma * mm_per_px
        if prim.kind == "point":
            cx, cy = prim.points[0, 0] * sx, prim.points[0, 1] * sy
            r = max(prim.sigma * mm_per_px, 1e-3)
            parts.append(
                f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{_fmt(r)}" fill="{colour}"/>'
            )
            continue
        if prim.kind == "catmullrom":
            pts = (catmull_rom_basis(prim.n_points, 16) @ prim.points)
        else:
            pts = prim.points
        coords = " L ".join(f"{_fmt(p[0] * sx)} {_fmt(p[1] * sy)}" for p in pts[1:])
        d = f"M {_fmt(pts[0, 0] * sx)} {_fmt(pts[0, 1] * sy)}" + (f" L {coords}" if coords else "")
        parts.append(
            f'<path d="{d}" fill="none" stroke="{colour}" '
            f'stroke-width="{_fmt(width)}" stroke-linecap="round"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
