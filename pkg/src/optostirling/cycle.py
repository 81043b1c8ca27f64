"""Isotherms, isochores and the Stirling cycle they enclose.

Isolines are traced by marching squares on the gridded map and every vertex
is then refined on the continuous field.  Corners are solved as the
intersection of an isotherm and an isochore, and the four arcs between the
corners form the cycle.  A schedule walks the cycle at constant speed within
each stroke.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _io
from .errors import EmptyLevel, NoClosedLoop, NoConvergence
from .landscape import GridSpec, LandscapeMap
from .params import PhysicalParams
from .stability import RegimeClass

__all__ = [
    "FIELDS",
    "STROKES",
    "Isoline",
    "Stroke",
    "StirlingCycle",
    "Schedule",
    "trace_isoline",
    "refine_corner",
    "build_cycle",
    "make_schedule",
    "constant_schedule",
    "VALID_ONLY",
    "WITH_NONADIABATIC",
]

# field name -> map key
FIELDS = {"Temperature": "T", "OpticalSpring": "Delta_m", "T": "T", "Delta_m": "Delta_m"}
STROKES = ("IsothermalHot", "IsochoricLow", "IsothermalCold", "IsochoricHigh")
VALID_ONLY = (RegimeClass.VALID,)
WITH_NONADIABATIC = (RegimeClass.VALID, RegimeClass.NONADIABATIC)


def _key(field_name: str) -> str:
    try:
        return FIELDS[field_name]
    except KeyError:
        raise ValueError(f"unknown field {field_name!r}") from None


def _scale(level: float) -> float:
    return abs(level) if level != 0 else 1.0


@dataclass
class Isoline:
    """Ordered polyline on one level set.

    ``cells[k]`` is the flat index ``j*(nx-1)+i`` of the grid cell that
    contains segment ``k``.  For closed lines the last vertex connects back
    to the first and is not repeated.
    """

    field: str
    level: float
    points: np.ndarray
    closed: bool
    cells: np.ndarray
    residual: float = 0.0

    @property
    def n_segments(self) -> int:
        n = len(self.points)
        return n if self.closed else n - 1

    def segment(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        n = len(self.points)
        return self.points[k % n], self.points[(k + 1) % n]

    def point_at(self, s: float) -> np.ndarray:
        k = int(math.floor(s))
        a, b = self.segment(min(k, self.n_segments - 1))
        return a + (s - k) * (b - a)


# -- isoline tracing ----------------------------------------------------------

def _bisect_edges(m: LandscapeMap, key, level, pa, pb, fa, t0, tol, max_iter=100):
    """Refine level crossings on segments ``pa -> pb``, starting from ``t0``."""
    lo = np.zeros(len(pa))
    hi = np.ones(len(pa))
    sa = fa >= level
    scale = _scale(level)
    best_t = t0.copy()
    best_r = np.full(len(pa), np.inf)
    t = t0
    for _ in range(max_iter):
        pts = pa + t[:, None] * (pb - pa)
        f = np.asarray(m.evaluate(pts[:, 0], pts[:, 1])[key], dtype=float)
        r = np.abs(f - level)
        better = r < best_r
        best_t[better] = t[better]
        best_r[better] = r[better]
        done = best_r <= tol * scale
        if np.all(done):
            break
        same = (f >= level) == sa
        lo = np.where(same, t, lo)
        hi = np.where(same, hi, t)
        t = 0.5 * (lo + hi)
    return pa + best_t[:, None] * (pb - pa), best_r / scale


def trace_isoline(m: LandscapeMap, field: str, level: float, refine_tol: float = 1e-6,
                  allowed=VALID_ONLY, bridge_cells: float = 20.0) -> list[Isoline]:
    """Level set ``field == level`` restricted to cells whose corners are all allowed.

    Parameters
    ----------
    m : LandscapeMap
    field : {"Temperature", "OpticalSpring"} or the map keys "T", "Delta_m"
    level : float
    refine_tol : float
        Relative tolerance of the vertex refinement.  Without a continuous
        field source the linear-interpolation seeds are returned as is.
    allowed : iterable of RegimeClass
        Regimes a cell corner may have.
    bridge_cells : float
        Fragments whose ends are closer than this many cells are joined by
        following the continuous level set, provided every new point is in
        an allowed regime.  Set to 0 to disable.

    Returns
    -------
    list of Isoline
        One entry per connected branch, in a deterministic order.

    Raises
    ------
    EmptyLevel
        If no usable cell brackets the level.
    """
    key = _key(field)
    F = m.fields[key]
    ny, nx = F.shape
    node_ok = np.isin(m.regime, [int(a) for a in allowed]) & np.isfinite(F)
    cell_ok = node_ok[:-1, :-1] & node_ok[:-1, 1:] & node_ok[1:, :-1] & node_ok[1:, 1:]
    pos = np.where(np.isfinite(F), F >= level, False)

    c0, c1 = pos[:-1, :-1], pos[:-1, 1:]
    c2, c3 = pos[1:, 1:], pos[1:, :-1]
    case = (c0.astype(np.int8) | (c1 << 1) | (c2 << 2) | (c3 << 3)) * cell_ok
    active = np.argwhere((case != 0) & (case != 15) & cell_ok)
    if len(active) == 0:
        raise EmptyLevel(f"no usable cell brackets {field} = {level:g}")

    n_h = ny * (nx - 1)

    def h(j, i):
        return j * (nx - 1) + i

    def v(j, i):
        return n_h + j * nx + i

    links: dict[int, list[tuple[int, int]]] = {}
    for j, i in active:
        s = (c0[j, i], c1[j, i], c2[j, i], c3[j, i])
        edges = (h(j, i), v(j, i + 1), h(j + 1, i), v(j, i))
        crossing = [e for e, (a, b) in zip(range(4), ((0, 1), (1, 2), (3, 2), (0, 3)))
                    if s[a] != s[b]]
        if len(crossing) == 2:
            pairs = [tuple(crossing)]
        else:
            centre = 0.25 * (F[j, i] + F[j, i + 1] + F[j + 1, i + 1] + F[j + 1, i]) >= level
            pairs = [(0, 1), (2, 3)] if centre == s[0] else [(0, 3), (1, 2)]
        cell = j * (nx - 1) + i
        for a, b in pairs:
            ea, eb = edges[a], edges[b]
            links.setdefault(ea, []).append((eb, cell))
            links.setdefault(eb, []).append((ea, cell))

    ids = np.array(sorted(links))
    is_h = ids < n_h
    jj = np.where(is_h, ids // (nx - 1), (ids - n_h) // nx)
    ii = np.where(is_h, ids % (nx - 1), (ids - n_h) % nx)
    x, y = m.spec.x, m.spec.y
    ja, ia = jj, ii
    jb, ib = np.where(is_h, jj, jj + 1), np.where(is_h, ii + 1, ii)
    pa = np.column_stack([x[ia], y[ja]])
    pb = np.column_stack([x[ib], y[jb]])
    fa, fb = F[ja, ia], F[jb, ib]
    t = (level - fa) / (fb - fa)
    seeds = pa + t[:, None] * (pb - pa)
    if m.source is not None:
        pts, resid = _bisect_edges(m, key, level, pa, pb, fa, t, refine_tol)
    else:
        pts, resid = seeds, np.zeros(len(ids))
    where = {e: k for k, e in enumerate(ids)}

    lines = []
    seen = set()

    def walk(start):
        chain, cells = [start], []
        seen.add(start)
        prev, cur = None, start
        while True:
            nxt = [(e, c) for e, c in links[cur] if e != prev and e not in seen]
            if not nxt:
                closing = [c for e, c in links[cur] if e == start and cur != start]
                return chain, cells, closing
            prev, (cur, c) = cur, nxt[0]
            seen.add(cur)
            chain.append(cur)
            cells.append(c)

    for start in ids:
        if start in seen or len(links[start]) != 1:
            continue
        chain, cells, _ = walk(start)
        lines.append((chain, cells, False))
    for start in ids:
        if start in seen:
            continue
        chain, cells, closing = walk(start)
        closed = bool(closing) and len(chain) > 2
        if closed:
            cells.append(closing[0])
        lines.append((chain, cells, closed))

    out = []
    for chain, cells, closed in lines:
        idx = [where[e] for e in chain]
        if len(idx) < 2:
            continue
        out.append(Isoline(field=key, level=float(level), points=pts[idx].copy(), closed=closed,
                           cells=np.array(cells, dtype=np.int64),
                           residual=float(np.max(resid[idx]))))
    if not out:
        raise EmptyLevel(f"no usable cell brackets {field} = {level:g}")
    if m.source is not None and bridge_cells > 0:
        out = _bridge_all(m, out, key, level, refine_tol, allowed, bridge_cells)
    return out


def _cell_of(spec: GridSpec, pts: np.ndarray) -> np.ndarray:
    i = np.clip(((pts[:, 0] - spec.x_min) / spec.widths[0] * (spec.nx - 1)).astype(int),
                0, spec.nx - 2)
    j = np.clip(((pts[:, 1] - spec.y_min) / spec.widths[1] * (spec.ny - 1)).astype(int),
                0, spec.ny - 2)
    return j * (spec.nx - 1) + i


def _follow(m: LandscapeMap, key, level, start, target, tol, allowed, h, heading, max_len):
    """Walk along the level set from ``start`` to ``target`` (normalised coordinates).

    The walk leaves ``start`` along ``heading`` and keeps its direction of
    travel, so it can round a hairpin whose arms end close together.
    Returns the intermediate points in data coordinates, or None if the walk
    leaves the allowed regimes or has not met the target within an arc
    length ``max_len``.
    """
    spec = m.spec
    w = np.array(spec.widths)
    o = np.array([spec.x_min, spec.y_min])
    scale = _scale(level)
    d = 1e-7
    offs = np.array([[0, 0], [d, 0], [-d, 0], [0, d], [0, -d]])
    allowed = [int(a) for a in allowed]

    def probe(u):
        q = o + (u + offs) * w
        return np.asarray(m.evaluate(q[:, 0], q[:, 1])[key], dtype=float)

    u = start.copy()
    direction = np.asarray(heading, dtype=float)
    out = []
    for _ in range(int(max_len / h) + 1):
        if out and np.linalg.norm(target - u) <= h:
            return np.array(out).reshape(-1, 2)
        f = probe(u)
        g = np.array([f[1] - f[2], f[3] - f[4]]) / (2 * d)
        tang = np.array([-g[1], g[0]])
        nt = np.linalg.norm(tang)
        if not np.isfinite(nt) or nt == 0:
            return None
        tang /= nt
        if tang @ direction < 0:
            tang = -tang
        direction = tang
        u = u + h * tang
        for _ in range(20):
            f = probe(u)
            r = f[0] - level
            if not np.all(np.isfinite(f)):
                return None
            if abs(r) <= tol * scale:
                break
            g = np.array([f[1] - f[2], f[3] - f[4]]) / (2 * d)
            u = u - r * g / (g @ g)
        else:
            return None
        q = o + u * w
        if int(m.evaluate(q[:1], q[1:], regime=True)["regime"][0]) not in allowed:
            return None
        out.append(q)
    return None


def _heading(line: Isoline, end: int, w: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    """Outward direction of ``line`` at one end, in normalised coordinates."""
    pts = line.points / w
    pts = pts if end == 1 else pts[::-1]
    for k in range(len(pts) - 1, 0, -1):
        step = pts[k] - pts[k - 1]
        if np.any(step != 0):
            return step
    return fallback


def _bridge_all(m, lines, key, level, tol, allowed, bridge_cells):
    """Join fragments whose ends lie within ``bridge_cells`` cells of each other.

    Thin allowed strips narrower than a grid cell cut a level set into
    fragments; each gap is re-traced on the continuous field and accepted
    only if every new point lies in an allowed regime.
    """
    spec = m.spec
    w = np.array(spec.widths)
    o = np.array([spec.x_min, spec.y_min])
    cell = np.array([1.0 / (spec.nx - 1), 1.0 / (spec.ny - 1)])
    reach = bridge_cells * float(np.max(cell))
    h = float(np.min(cell)) / 3
    lines = list(lines)
    failed = set()
    while True:
        ends = []
        for k, ln in enumerate(lines):
            if ln.closed:
                continue
            ends.append((k, 0, (ln.points[0] - o) / w))
            ends.append((k, 1, (ln.points[-1] - o) / w))
        pairs = []
        for a in range(len(ends)):
            for b in range(a + 1, len(ends)):
                ka, ea, ua = ends[a]
                kb, eb, ub = ends[b]
                dist = float(np.linalg.norm(ua - ub))
                if dist <= reach and (ka != kb or len(lines[ka].points) > 3):
                    key_ab = (tuple(np.round(ua, 12)), tuple(np.round(ub, 12)))
                    if key_ab not in failed:
                        pairs.append((dist, ka, ea, ua, kb, eb, ub, key_ab))
        pairs.sort(key=lambda t: t[:3] + t[4:6])
        merged = False
        for dist, ka, ea, ua, kb, eb, ub, key_ab in pairs:
            path = _follow(m, key, level, ua, ub, tol, allowed, h,
                           _heading(lines[ka], ea, w, ub - ua), 4 * reach)
            if path is None:
                failed.add(key_ab)
                continue
            A, B = lines[ka], lines[kb]
            if ka == kb:
                pa = A.points if ea == 1 else A.points[::-1]
                pts = np.vstack([pa, path])
                cells = _cell_of(spec, 0.5 * (pts + np.roll(pts, -1, axis=0)))
                lines[ka] = Isoline(A.field, A.level, pts, True, cells, A.residual)
            else:
                pa = A.points if ea == 1 else A.points[::-1]
                pb = B.points if eb == 0 else B.points[::-1]
                pts = np.vstack([pa, path, pb])
                cells = _cell_of(spec, 0.5 * (pts[1:] + pts[:-1]))
                lines[ka] = Isoline(A.field, A.level, pts, False, cells,
                                    max(A.residual, B.residual))
                del lines[kb]
            merged = True
            break
        if not merged:
            return lines


# -- corners ------------------------------------------------------------------

def _residual(m, u, spec, levels):
    x = spec.x_min + u[..., 0] * (spec.x_max - spec.x_min)
    y = spec.y_min + u[..., 1] * (spec.y_max - spec.y_min)
    f = m.evaluate(x, y)
    return np.stack([(np.asarray(f["T"]) - levels[0]) / _scale(levels[0]),
                     (np.asarray(f["Delta_m"]) - levels[1]) / _scale(levels[1])], axis=-1)


def _newton(m, u0, levels, tol, lo, hi, max_iter=60):
    spec = m.spec
    h = 1e-7
    offs = np.array([[0, 0], [h, 0], [-h, 0], [0, h], [0, -h]])
    u = u0.copy()
    r = _residual(m, u[None] + offs, spec, levels)
    for _ in range(max_iter):
        r0 = r[0]
        if not np.all(np.isfinite(r0)):
            return None
        if np.max(np.abs(r0)) <= tol:
            return u
        J = np.column_stack([(r[1] - r[2]) / (2 * h), (r[3] - r[4]) / (2 * h)])
        try:
            step = -np.linalg.solve(J, r0)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(step)):
            return None
        norm0 = np.max(np.abs(r0))
        alpha = 1.0
        for _ in range(30):
            cand = u + alpha * step
            if np.all(cand >= lo) and np.all(cand <= hi):
                rc = _residual(m, cand[None] + offs, spec, levels)
                if np.all(np.isfinite(rc[0])) and np.max(np.abs(rc[0])) < norm0:
                    u, r = cand, rc
                    break
            alpha *= 0.5
        else:
            return None
    return u if np.max(np.abs(r[0])) <= tol else None


def _bisect_scalar(fn, a, b, tol, max_iter=200):
    fa, fb = fn(a), fn(b)
    if not (np.isfinite(fa) and np.isfinite(fb)) or (fa > 0) == (fb > 0):
        return None
    for _ in range(max_iter):
        c = 0.5 * (a + b)
        fc = fn(c)
        if not np.isfinite(fc):
            return None
        if abs(fc) <= tol or b - a < 1e-16:
            return c
        if (fc > 0) == (fa > 0):
            a, fa = c, fc
        else:
            b = c
    return None


def _nested_bisection(m, lo, hi, levels, tol):
    spec = m.spec
    for outer in (0, 1):
        inner = 1 - outer

        def inner_root(s):
            def g(w):
                u = np.empty(2)
                u[outer], u[inner] = s, w
                return _residual(m, u, spec, levels)[1]
            return _bisect_scalar(g, lo[inner], hi[inner], tol * 1e-3)

        def outer_fn(s):
            w = inner_root(s)
            if w is None:
                return math.nan
            u = np.empty(2)
            u[outer], u[inner] = s, w
            return _residual(m, u, spec, levels)[0]

        s = _bisect_scalar(outer_fn, lo[outer], hi[outer], tol)
        if s is None:
            continue
        w = inner_root(s)
        if w is None:
            continue
        u = np.empty(2)
        u[outer], u[inner] = s, w
        if np.max(np.abs(_residual(m, u, spec, levels))) <= tol:
            return u
    return None


def refine_corner(m: LandscapeMap, seed, T_level: float, Dm_level: float, tol: float = 1e-6,
                  radius: float = 2.0) -> np.ndarray:
    """Solve ``T = T_level`` and ``Delta_m = Dm_level`` near ``seed``.

    A damped Newton iteration with a central finite-difference Jacobian runs
    first; if it fails a nested bisection inside the same box is tried.  The
    search is confined to ``radius`` grid cells around the seed (and to the
    map window).

    Raises
    ------
    NoConvergence
        If neither method meets ``tol`` relative to each level.
    """
    spec = m.spec
    w = np.array(spec.widths)
    u0 = (np.asarray(seed, dtype=float) - [spec.x_min, spec.y_min]) / w
    cell = np.array([1.0 / (spec.nx - 1), 1.0 / (spec.ny - 1)])
    lo = np.maximum(u0 - radius * cell, 0.0)
    hi = np.minimum(u0 + radius * cell, 1.0)
    levels = (T_level, Dm_level)
    u = None
    if np.all(u0 >= lo) and np.all(u0 <= hi):
        u = _newton(m, u0, levels, tol, lo, hi)
    if u is None:
        u = _nested_bisection(m, lo, hi, levels, tol)
    if u is None:
        raise NoConvergence(f"no corner T={T_level:g}, Delta_m={Dm_level:g} near {tuple(seed)}")
    return np.array([spec.x_min, spec.y_min]) + u * w


# -- cycle --------------------------------------------------------------------

@dataclass
class Stroke:
    kind: str
    field: str
    level: float
    points: np.ndarray


@dataclass
class StirlingCycle:
    """Closed four-stroke cycle in a control plane.

    ``corners[k]`` is the start of ``strokes[k]``; the strokes follow
    :data:`STROKES`.
    """

    corners: np.ndarray
    strokes: list[Stroke]
    levels: dict
    spec: GridSpec
    source: object = None
    branch: int = 0
    n_candidates: int = 1
    touches_nonadiabatic: bool = False
    max_residual: float = 0.0
    provenance: dict = field(default_factory=dict)

    @property
    def T_hot(self):
        return self.levels["T_hot"]

    @property
    def T_cold(self):
        return self.levels["T_cold"]

    def closure_gap(self) -> float:
        return float(np.max(np.abs(self.strokes[-1].points[-1] - self.strokes[0].points[0])))

    def evaluate(self, x, y, regime=False):
        return self.source(x, y, regime=regime)

    def to_json(self, path) -> Path:
        doc = {
            "provenance": dict(self.provenance, grid=self.spec.__dict__),
            "levels": self.levels,
            "branch": self.branch,
            "n_candidates": self.n_candidates,
            "touches_nonadiabatic": self.touches_nonadiabatic,
            "max_residual": self.max_residual,
            "corners": self.corners.tolist(),
            "strokes": [{"kind": s.kind, "field": s.field, "level": s.level,
                         "points": s.points.tolist()} for s in self.strokes],
        }
        return _io.atomic_write(path, _io.dumps(doc))

    @classmethod
    def from_json(cls, path) -> "StirlingCycle":
        doc = json.loads(Path(path).read_text())
        prov = doc["provenance"]
        spec = GridSpec(**prov.pop("grid"))
        strokes = [Stroke(s["kind"], s["field"], s["level"], np.array(s["points"]))
                   for s in doc["strokes"]]
        return cls(np.array(doc["corners"]), strokes, doc["levels"], spec, None, doc["branch"],
                   doc["n_candidates"], doc["touches_nonadiabatic"], doc["max_residual"], prov)


@dataclass
class _Crossing:
    t_line: tuple
    t_param: float
    d_line: tuple
    d_param: float
    point: np.ndarray
    ok: bool


def _intersections(a: Isoline, b: Isoline, spec: GridSpec):
    """Parameters ``(sa, sb, point)`` of every crossing between two polylines."""
    w = np.array(spec.widths)
    by_cell: dict[int, list[int]] = {}
    for k, c in enumerate(b.cells):
        by_cell.setdefault(int(c), []).append(k)
    out = []
    for ka, c in enumerate(a.cells):
        for kb in by_cell.get(int(c), ()):
            p0, p1 = (q / w for q in a.segment(ka))
            q0, q1 = (q / w for q in b.segment(kb))
            r, s = p1 - p0, q1 - q0
            den = r[0] * s[1] - r[1] * s[0]
            if den == 0:
                continue
            d = q0 - p0
            t = (d[0] * s[1] - d[1] * s[0]) / den
            u = (d[0] * r[1] - d[1] * r[0]) / den
            if 0 <= t <= 1 and 0 <= u <= 1:
                out.append((ka + t, kb + u, (p0 + t * r) * w))
    return out


def _next_along(line: Isoline, params: list[tuple[float, int]], s: float, direction: int):
    """Nearest crossing strictly after ``s`` in ``direction`` (wrapping on closed lines)."""
    n = line.n_segments
    best, best_d = None, math.inf
    for p, idx in params:
        d = (p - s) * direction
        if line.closed:
            d = d % n
        if d > 1e-12 and d < best_d:
            best, best_d = idx, d
    return best


def _arc(line: Isoline, sa: float, sb: float, direction: int, pa, pb) -> np.ndarray:
    n = len(line.points)
    if direction > 0:
        if line.closed and sb < sa:
            sb += n
        ks = [k for k in range(math.floor(sa) + 1, math.ceil(sb))]
    else:
        if line.closed and sb > sa:
            sb -= n
        ks = [k for k in range(math.ceil(sa) - 1, math.floor(sb), -1)]
    inner = [line.points[k % n] for k in ks]
    return np.array([pa] + inner + [pb])


def build_cycle(m: LandscapeMap, T_hot: float, T_cold: float, Dm_h: float, Dm_l: float,
                refine_tol: float = 1e-6, branch: int = 0, allowed=VALID_ONLY) -> StirlingCycle:
    """Assemble the cycle formed by two isotherms and two isochores.

    Stroke 1->2 runs along ``T_hot`` from the ``Dm_h`` corner to the ``Dm_l``
    corner, then along ``Dm_l`` to ``T_cold``, along ``T_cold`` back to
    ``Dm_h`` and along ``Dm_h`` to the start.  When several closed loops
    exist they are ranked by the distance of their centroid from the window
    centre, then by perimeter; ``branch`` picks one.

    Raises
    ------
    NoClosedLoop
        If a level is unattainable or no four arcs close a loop.
    """
    if not T_hot > T_cold:
        raise ValueError("T_hot must exceed T_cold")
    if not Dm_h > Dm_l:
        raise ValueError("Dm_h must exceed Dm_l")
    lines = {}
    try:
        for name, key, level in (("Th", "T", T_hot), ("Tc", "T", T_cold),
                                 ("Dh", "Delta_m", Dm_h), ("Dl", "Delta_m", Dm_l)):
            lines[name] = trace_isoline(m, key, level, refine_tol, allowed)
    except EmptyLevel as exc:
        raise NoClosedLoop(str(exc)) from exc

    levels = {"Th": T_hot, "Tc": T_cold, "Dh": Dm_h, "Dl": Dm_l}
    crossings: list[_Crossing] = []
    on_line: dict[tuple, list[tuple[float, int]]] = {}
    for tn in ("Th", "Tc"):
        for ti, tl in enumerate(lines[tn]):
            for dn in ("Dh", "Dl"):
                for di, dl in enumerate(lines[dn]):
                    for sa, sb, pt in _intersections(tl, dl, m.spec):
                        ok = True
                        if m.source is not None:
                            try:
                                pt = refine_corner(m, pt, levels[tn], levels[dn], refine_tol)
                            except NoConvergence:
                                ok = False
                        idx = len(crossings)
                        crossings.append(_Crossing((tn, ti), sa, (dn, di), sb, pt, ok))
                        on_line.setdefault((tn, ti), []).append((sa, idx))
                        on_line.setdefault((dn, di), []).append((sb, idx))

    def line_of(key):
        return lines[key[0]][key[1]]

    def param_on(c: _Crossing, key):
        return c.t_param if c.t_line == key else c.d_param

    def kind_of(c: _Crossing):
        return c.t_line[0], c.d_line[0]

    # stroke k travels along line family fam[k] from corner type start[k] to end[k]
    plan = [("t_line", ("Th", "Dl")), ("d_line", ("Tc", "Dl")),
            ("t_line", ("Tc", "Dh")), ("d_line", ("Th", "Dh"))]
    candidates = []

    def extend(path, arcs):
        k = len(arcs)
        if k == 4:
            if path[-1] == path[0]:
                candidates.append((list(path[:4]), list(arcs)))
            return
        cur = crossings[path[-1]]
        attr, target = plan[k]
        key = getattr(cur, attr)
        line = line_of(key)
        s = param_on(cur, key)
        for direction in (1, -1):
            nxt = _next_along(line, on_line[key], s, direction)
            if nxt is None or kind_of(crossings[nxt]) != target:
                continue
            if k < 3 and nxt in path:
                continue
            extend(path + [nxt], arcs + [(key, direction)])

    for idx, c in enumerate(crossings):
        if kind_of(c) == ("Th", "Dh"):
            extend([idx], [])

    built = []
    w = np.array(m.spec.widths)
    centre = np.array(m.spec.center)
    for corners, arcs in candidates:
        if not all(crossings[c].ok for c in corners):
            continue
        strokes = []
        for k, (key, direction) in enumerate(arcs):
            a, b = crossings[corners[k]], crossings[corners[(k + 1) % 4]]
            line = line_of(key)
            pts = _arc(line, param_on(a, key), param_on(b, key), direction, a.point, b.point)
            strokes.append(Stroke(STROKES[k], line.field, line.level, pts))
        poly = np.vstack([s.points[:-1] for s in strokes])
        seglen = np.linalg.norm(np.diff(np.vstack([poly, poly[:1]]), axis=0) / w, axis=1)
        dist = float(np.linalg.norm((poly.mean(axis=0) - centre) / w))
        built.append((dist, float(seglen.sum()), corners, strokes))
    if not built:
        raise NoClosedLoop(
            f"isolines T={T_hot:g},{T_cold:g} and Delta_m={Dm_h:g},{Dm_l:g} do not close a loop")
    built.sort(key=lambda b: (b[0], b[1]))
    # identical loops reached from different starting crossings collapse
    unique = []
    for b in built:
        if not any(b[2] == u[2] for u in unique):
            unique.append(b)
    if not 0 <= branch < len(unique):
        raise NoClosedLoop(f"branch {branch} requested but only {len(unique)} loops found")
    _, _, corners, strokes = unique[branch]

    touches = False
    max_res = 0.0
    if m.source is not None:
        for s in strokes:
            f = m.source(s.points[:, 0], s.points[:, 1], regime=True)
            touches |= bool(np.any(f["regime"] == RegimeClass.NONADIABATIC))
            res = np.abs(np.asarray(f[s.field]) - s.level) / _scale(s.level)
            max_res = max(max_res, float(np.max(res)))
    lv = {"T_hot": T_hot, "T_cold": T_cold, "Dm_h": Dm_h, "Dm_l": Dm_l}
    prov = dict(m.provenance)
    prov.pop("grid", None)
    return StirlingCycle(np.array([crossings[c].point for c in corners]), strokes, lv, m.spec,
                         m.source, branch, len(unique), touches, max_res, prov)


# -- schedule -----------------------------------------------------------------

SCHEDULE_COLUMNS = ("t", "s", "x", "y", "T", "Delta_m", "Gamma_m", "n_m")


@dataclass
class Schedule:
    """Time-sampled controls and effective parameters along a cycle.

    Corner samples are shared between consecutive strokes, so stroke ``k``
    spans sample indices ``bounds[k]`` to ``bounds[k+1]`` inclusive.
    ``frac`` is the arc-length fraction of each sample within its stroke and
    allows retiming without re-sampling.
    """

    t_tot: float
    r_T: float
    gamma: float
    t: np.ndarray
    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    T: np.ndarray
    Delta_m: np.ndarray
    Gamma_m: np.ndarray
    n_m: np.ndarray
    bounds: tuple
    frac: np.ndarray
    levels: dict = field(default_factory=dict)
    axes: tuple = ("x", "y")
    omega_m: float = 2 * math.pi * 1e5
    provenance: dict = field(default_factory=dict)

    @property
    def n_strokes(self) -> int:
        return len(self.bounds) - 1

    def stroke_times(self) -> list[tuple[float, float]]:
        return [(float(self.t[a]), float(self.t[b])) for a, b in zip(self.bounds, self.bounds[1:])]

    def retime(self, t_tot: float | None = None, r_T: float | None = None) -> "Schedule":
        """Same samples walked with a different total time or isothermal fraction."""
        t_tot = self.t_tot if t_tot is None else t_tot
        r_T = self.r_T if r_T is None else r_T
        t = _times(self.bounds, self.frac, t_tot, r_T)
        return Schedule(t_tot, r_T, self.gamma, t, self.s.copy(), self.x, self.y, self.T,
                        self.Delta_m, self.Gamma_m, self.n_m, self.bounds, self.frac,
                        dict(self.levels), self.axes, self.omega_m, dict(self.provenance))

    # -- export ---------------------------------------------------------------

    def _table(self):
        return np.column_stack([self.t, self.s, self.x, self.y, self.T, self.Delta_m,
                                self.Gamma_m, self.n_m])

    def _meta(self):
        return dict(self.provenance, t_tot=self.t_tot, r_T=self.r_T, gamma=self.gamma,
                    bounds=list(self.bounds), levels=self.levels, axes=list(self.axes),
                    omega_m=self.omega_m)

    def to_csv(self, path) -> Path:
        names = ["t", "s", self.axes[0], self.axes[1], "T", "Delta_m", "Gamma_m", "n_m"]
        rows = [",".join(_io.fmt(float(v)) for v in r) for r in self._table()]
        text = _io.csv_header(self._meta()) + ",".join(names) + "\n" + "\n".join(rows) + "\n"
        return _io.atomic_write(path, text)

    def to_json(self, path) -> Path:
        doc = {"meta": self._meta(), "frac": self.frac.tolist(),
               "columns": {c: getattr(self, c).tolist() for c in SCHEDULE_COLUMNS}}
        return _io.atomic_write(path, _io.dumps(doc))

    @classmethod
    def from_json(cls, path) -> "Schedule":
        doc = json.loads(Path(path).read_text())
        meta = dict(doc["meta"])
        cols = {c: np.array(v, dtype=float) for c, v in doc["columns"].items()}
        kw = {k: meta.pop(k) for k in ("t_tot", "r_T", "gamma", "levels", "omega_m")}
        bounds = tuple(meta.pop("bounds"))
        axes = tuple(meta.pop("axes"))
        return cls(t=cols["t"], s=cols["s"], x=cols["x"], y=cols["y"], T=cols["T"],
                   Delta_m=cols["Delta_m"], Gamma_m=cols["Gamma_m"], n_m=cols["n_m"],
                   bounds=bounds, frac=np.array(doc["frac"]), axes=axes, provenance=meta, **kw)


def _durations(n_strokes, t_tot, r_T):
    if n_strokes == 4:
        iso, cho = r_T * t_tot / 2, (1 - r_T) * t_tot / 2
        return [iso, cho, iso, cho]
    return [t_tot / n_strokes] * n_strokes


def _times(bounds, frac, t_tot, r_T):
    t = np.empty(len(frac))
    start = 0.0
    for k, dur in enumerate(_durations(len(bounds) - 1, t_tot, r_T)):
        a, b = bounds[k], bounds[k + 1]
        lo = a if k == 0 else a + 1  # a shared corner keeps the time set by the previous stroke
        t[lo:b + 1] = start + dur * frac[lo:b + 1]
        start += dur
    t[-1] = t_tot
    return t


def _resample(points: np.ndarray, w: np.ndarray, n: int) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0) / w, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    target = np.linspace(0.0, cum[-1], n)
    return np.column_stack([np.interp(target, cum, points[:, 0]),
                            np.interp(target, cum, points[:, 1])])


def _project(cycle: StirlingCycle, pts: np.ndarray, key: str, level: float, tol: float):
    """Move interior samples onto the level set along the field gradient."""
    w = np.array(cycle.spec.widths)
    h = 1e-7
    pts = pts.copy()
    inner = slice(1, len(pts) - 1)
    for _ in range(8):
        q = pts[inner]
        if len(q) == 0:
            break
        stack = np.concatenate([q, q + [h * w[0], 0], q - [h * w[0], 0],
                                q + [0, h * w[1]], q - [0, h * w[1]]])
        f = np.asarray(cycle.evaluate(stack[:, 0], stack[:, 1])[key]).reshape(5, -1)
        r = f[0] - level
        if np.all(np.abs(r) <= tol * _scale(level)):
            break
        gx = (f[1] - f[2]) / (2 * h)
        gy = (f[3] - f[4]) / (2 * h)
        g2 = gx**2 + gy**2
        ok = np.isfinite(r) & (g2 > 0)
        step = np.where(ok, r / np.where(ok, g2, 1.0), 0.0)
        pts[inner, 0] -= step * gx * w[0]
        pts[inner, 1] -= step * gy * w[1]
    return pts


def make_schedule(cycle: StirlingCycle, p: PhysicalParams, t_tot: float, r_T: float = 0.5,
                  n_samples: int = 200, refine_tol: float = 1e-6) -> Schedule:
    """Constant-speed walk around ``cycle``.

    Each stroke is resampled at ``n_samples`` points equally spaced in arc
    length (window-normalised coordinates), the interior samples are pulled
    back onto their level set, and all effective parameters are re-evaluated
    at every sample.  Isotherms last ``r_T*t_tot/2`` each and isochores
    ``(1-r_T)*t_tot/2``.
    """
    if not t_tot > 0:
        raise ValueError("t_tot must be positive")
    if not 0 < r_T < 1:
        raise ValueError("r_T must lie in (0, 1)")
    if n_samples < 4:
        raise ValueError("need at least 4 samples per stroke")
    w = np.array(cycle.spec.widths)
    pieces, frac, bounds = [], [], [0]
    for k, st in enumerate(cycle.strokes):
        pts = _resample(st.points, w, n_samples)
        if cycle.source is not None:
            pts = _project(cycle, pts, st.field, st.level, refine_tol)
        seg = np.linalg.norm(np.diff(pts, axis=0) / w, axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        fr = cum / cum[-1] if cum[-1] > 0 else np.linspace(0, 1, len(cum))
        if k > 0:
            pts, fr = pts[1:], fr[1:]
        pieces.append(pts)
        frac.append(fr)
        bounds.append(bounds[-1] + n_samples - 1)
    pts = np.vstack(pieces)
    frac = np.concatenate(frac)
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0) / w, axis=1))])
    f = cycle.evaluate(pts[:, 0], pts[:, 1])
    bounds = tuple(bounds)
    t = _times(bounds, frac, t_tot, r_T)
    axes = (cycle.spec.x_name, cycle.spec.y_name)
    prov = dict(cycle.provenance, refine_tol=refine_tol, n_samples=n_samples)
    return Schedule(float(t_tot), float(r_T), p.gamma, t, s, pts[:, 0].copy(), pts[:, 1].copy(),
                    np.asarray(f["T"], float), np.asarray(f["Delta_m"], float),
                    np.asarray(f["Gamma_m"], float), np.asarray(f["n_m"], float), bounds, frac,
                    dict(cycle.levels), axes, p.omega_m, prov)


def constant_schedule(t_tot: float, gamma: float, Gamma_m: float, n_m: float,
                      Delta_m: float = 0.0, n_samples: int = 9) -> Schedule:
    """Single-stroke schedule with frozen coefficients, useful as an oracle case."""
    frac = np.linspace(0.0, 1.0, n_samples)
    t = frac * t_tot
    ones = np.ones(n_samples)
    return Schedule(float(t_tot), 0.5, gamma, t, frac.copy(), 0 * ones, 0 * ones, 0 * ones,
                    Delta_m * ones, Gamma_m * ones, n_m * ones, (0, n_samples - 1), frac)
