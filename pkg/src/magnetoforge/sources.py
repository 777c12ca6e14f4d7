"""Impressed source fields h_s with curl h_s = j_s.

Polygonal filament coils use the closed-form field of a straight finite
segment, so the field is exactly curl-free away from the wire.  An ideal
filament has |h| ~ 1/d and infinite field energy; a positive
``wire_radius`` scales each segment's field by (d / r_w)^2 inside the
radius, the profile of a round conductor carrying uniform current.

Only curl h_s is physical.  ``GaugedLoop`` uses this freedom to remove the
gradient part of a planar loop's field inside a box, so that h_s vanishes in
a highly permeable region and no large h_s - grad psi cancellation occurs
there.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_GUARD = 1e-6
_CHUNK = 65536


class SourceError(ValueError):
    pass


class SourceField:
    def evaluate(self, x) -> np.ndarray:
        raise NotImplementedError

    def __add__(self, other):
        return Sum((self, other))

    def scaled(self, factor: float) -> "SourceField":
        raise NotImplementedError

    def gauge_potential(self, x) -> np.ndarray:
        """chi with h_s = h_coil - grad chi; zero unless the field is gauged."""
        return np.zeros(np.asarray(x).reshape(-1, 3).shape[0])

    @property
    def ampere_turns(self) -> float:
        raise SourceError(f"{type(self).__name__} has no ampere-turn rating")


@dataclass(frozen=True)
class Uniform(SourceField):
    h0: tuple

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.h0, dtype=float), x.shape).copy()

    def scaled(self, factor: float) -> "Uniform":
        return Uniform(tuple(factor * np.asarray(self.h0, dtype=float)))


@dataclass(frozen=True, eq=False)
class FilamentLoop(SourceField):
    vertices: np.ndarray  # closed polyline, first == last
    current: float = 1.0
    turns: float = 1.0
    guard: float = DEFAULT_GUARD
    wire_radius: float = 0.0

    def __post_init__(self):
        if not self.wire_radius >= 0:
            raise SourceError("wire radius must be non-negative")
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 3:
            raise SourceError("filament vertices must be an (n, 3) array")
        if len(v) < 4 or not np.allclose(v[0], v[-1]):
            raise SourceError("filament polyline must be closed with at least 3 segments")
        if np.any(np.linalg.norm(np.diff(v, axis=0), axis=1) <= 0):
            raise SourceError("filament segments must have positive length")
        object.__setattr__(self, "vertices", v)

    @property
    def ampere_turns(self) -> float:
        return self.current * self.turns

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        shape = x.shape
        x = x.reshape(-1, 3)
        out = np.empty_like(x)
        for i in range(0, len(x), _CHUNK):
            out[i:i + _CHUNK] = self._eval(x[i:i + _CHUNK])
        return out.reshape(shape)

    def _eval(self, x):
        p1 = self.vertices[:-1]
        p2 = self.vertices[1:]
        seg = p2 - p1
        r1 = x[:, None, :] - p1[None]
        r2 = x[:, None, :] - p2[None]
        t = np.clip(np.einsum("nsi,si->ns", r1, seg) / np.einsum("si,si->s", seg, seg), 0.0, 1.0)
        dist = np.linalg.norm(r1 - t[..., None] * seg[None], axis=2)
        if self.wire_radius == 0 and np.any(dist < self.guard):
            n, s = np.unravel_index(np.argmin(dist), dist.shape)
            raise SourceError(f"point {x[n].tolist()} lies within {self.guard} m of filament segment {s}")
        n1 = np.linalg.norm(r1, axis=2)
        n2 = np.linalg.norm(r2, axis=2)
        cr = np.cross(r1, r2)
        dot = np.einsum("nsi,nsi->ns", r1, r2)
        c2 = np.einsum("nsi,nsi->ns", cr, cr)
        nn = n1 * n2
        with np.errstate(divide="ignore", invalid="ignore"):
            # n1 n2 + r1.r2 = |cr|^2 / (n1 n2 - r1.r2) avoids cancellation beside the segment
            fac = np.where(dot < 0, (n1 + n2) * (nn - dot) / (nn * c2), (n1 + n2) / (nn * (nn + dot)))
        fac = np.where(c2 > 0, fac, 0.0)  # on the segment's line the segment adds nothing
        if self.wire_radius > 0:
            fac *= (np.minimum(dist, self.wire_radius) / self.wire_radius) ** 2
        return self.ampere_turns / (4.0 * np.pi) * np.einsum("nsi,ns->ni", cr, fac)

    def scaled(self, factor: float) -> "FilamentLoop":
        return FilamentLoop(self.vertices, self.current * factor, self.turns, self.guard, self.wire_radius)


def solid_angle(vertices: np.ndarray, x) -> np.ndarray:
    """Signed solid angle subtended by a closed planar convex polygon.

    Fan triangulation from the first vertex with the Van Oosterom-Strackee
    formula.  The result lies in (-2 pi, 2 pi) and jumps by 4 pi across the
    flat polygon; the filament field equals grad(I * Omega / (4 pi)).
    """
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    v = np.asarray(vertices, dtype=float)
    total = np.zeros(len(x))
    r1 = v[0] - x
    n1 = np.linalg.norm(r1, axis=1)
    for k in range(1, len(v) - 2):
        r2, r3 = v[k] - x, v[k + 1] - x
        n2, n3 = np.linalg.norm(r2, axis=1), np.linalg.norm(r3, axis=1)
        num = np.einsum("ni,ni->n", r1, np.cross(r2, r3))
        den = (n1 * n2 * n3 + np.einsum("ni,ni->n", r1, r2) * n3
               + np.einsum("ni,ni->n", r1, r3) * n2 + np.einsum("ni,ni->n", r2, r3) * n1)
        total += 2.0 * np.arctan2(num, den)
    # On the polygon's plane every triple product vanishes and points on a fan
    # diagonal get atan2(0, 0) from both triangles; use the limit from the side
    # the formula takes for +0, i.e. 2 pi inside and 0 outside.
    normal = np.cross(v[1] - v[0], v[2] - v[0])
    normal /= np.linalg.norm(normal)
    size = np.max(np.linalg.norm(v - v[0], axis=1))
    on_plane = np.abs((x - v[0]) @ normal) <= 1e-12 * size
    if on_plane.any():
        edges = np.diff(v, axis=0)
        rel = x[on_plane, None, :] - v[None, :-1, :]
        side = np.einsum("nsi,i->ns", np.cross(edges[None], rel), normal)
        inside = np.all(side > 0, axis=1) | np.all(side < 0, axis=1)
        total[on_plane] = np.where(inside, 2.0 * np.pi, 0.0)
    return total


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10.0 - 15.0 * t + 6.0 * t**2), 30.0 * t**2 * (1.0 - t)**2


@dataclass(frozen=True, eq=False)
class GaugedLoop(SourceField):
    """Planar filament loop with h_s set to zero inside the box [lo, hi].

    h_s = H_loop - grad(eta (U - U_c)), where U = I (Omega mod 4 pi) / (4 pi)
    is a single-valued magnetic potential inside the column spanned by the
    loop, U_c its value at the box center, and eta a smooth cutoff equal to
    1 on the box and 0 beyond ``ramp``.  The subtracted term is an exact
    gradient, so curl h_s is unchanged; the offset U_c only keeps the
    ramp term (U - U_c) grad eta small.  The ramped box must project
    strictly inside the loop.
    """

    loop: FilamentLoop
    lo: tuple
    hi: tuple
    ramp: float

    def __post_init__(self):
        v = self.loop.vertices
        lo, hi = np.asarray(self.lo, dtype=float), np.asarray(self.hi, dtype=float)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
            raise SourceError("gauge box needs corners lo < hi")
        if not self.ramp > 0:
            raise SourceError("gauge ramp width must be positive")
        normal = np.cross(v[1] - v[0], v[2] - v[0])
        axis = int(np.argmax(np.abs(normal)))
        if np.any(np.abs(v[:, axis] - v[0, axis]) > 1e-12 * (1 + np.abs(v).max())):
            raise SourceError("gauged loop must be planar and normal to a coordinate axis")
        a, b = [k for k in range(3) if k != axis]
        poly = v[:, [a, b]]
        edges = np.diff(poly, axis=0)
        orient = np.sign(np.sum(edges[:, 0] * np.roll(edges[:, 1], -1) - edges[:, 1] * np.roll(edges[:, 0], -1)))
        margin = max(self.loop.guard, self.loop.wire_radius) + self.ramp * 1e-3
        for ca in (lo[a] - self.ramp, hi[a] + self.ramp):
            for cb in (lo[b] - self.ramp, hi[b] + self.ramp):
                rel = np.array([ca, cb]) - poly[:-1]
                side = orient * (edges[:, 0] * rel[:, 1] - edges[:, 1] * rel[:, 0]) / np.linalg.norm(edges, axis=1)
                if np.any(side < margin):
                    raise SourceError("gauge box (with ramp) must project strictly inside the loop")
        object.__setattr__(self, "lo", tuple(lo))
        object.__setattr__(self, "hi", tuple(hi))
        object.__setattr__(self, "offset", float(self.potential(0.5 * (lo + hi))[0]))

    def potential(self, x) -> np.ndarray:
        """Scalar potential U with H_loop = grad U inside the loop's column."""
        omega = solid_angle(self.loop.vertices, x)
        return self.ampere_turns * np.mod(omega, 4.0 * np.pi) / (4.0 * np.pi)

    @property
    def ampere_turns(self) -> float:
        return self.loop.ampere_turns

    def cutoff(self, x):
        """eta and grad eta at points (n, 3)."""
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        up, dup = _smoothstep((x - (lo - self.ramp)) / self.ramp)
        down, ddown = _smoothstep(((hi + self.ramp) - x) / self.ramp)
        f = up * down
        df = (dup * down - up * ddown) / self.ramp
        eta = f.prod(axis=1)
        grad = np.stack([df[:, k] * np.prod(np.delete(f, k, axis=1), axis=1) for k in range(3)], axis=1)
        return eta, grad

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        shape = x.shape
        x = x.reshape(-1, 3)
        h = self.loop.evaluate(x)
        eta, grad = self.cutoff(x)
        on = eta > 0
        on |= np.any(grad != 0, axis=1)
        if on.any():
            U = self.potential(x[on]) - self.offset
            h[on] = (1.0 - eta[on])[:, None] * h[on] - U[:, None] * grad[on]
        return h.reshape(shape)

    def gauge_potential(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        eta, _ = self.cutoff(x)
        out = np.zeros(len(x))
        on = eta > 0
        if on.any():
            out[on] = eta[on] * (self.potential(x[on]) - self.offset)
        return out

    def scaled(self, factor: float) -> "GaugedLoop":
        return GaugedLoop(self.loop.scaled(factor), self.lo, self.hi, self.ramp)


@dataclass(frozen=True)
class Sum(SourceField):
    parts: tuple

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for p in self.parts:
            out = out + p.evaluate(x)
        return out

    def gauge_potential(self, x) -> np.ndarray:
        return sum(p.gauge_potential(x) for p in self.parts)

    def scaled(self, factor: float) -> "Sum":
        return Sum(tuple(p.scaled(factor) for p in self.parts))


def eval_hs(src: SourceField, x) -> np.ndarray:
    return src.evaluate(x)


def check_curl_free(src: SourceField, x, step: float) -> float:
    """Central-difference estimate of |curl h_s| at the point x."""
    x = np.asarray(x, dtype=float)
    pts = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = step
        pts += [x + e, x - e]
    h = src.evaluate(np.array(pts))
    # jac[i, k] = d h_i / d x_k
    jac = np.stack([(h[2 * k] - h[2 * k + 1]) / (2.0 * step) for k in range(3)], axis=1)
    curl = np.array([jac[2, 1] - jac[1, 2], jac[0, 2] - jac[2, 0], jac[1, 0] - jac[0, 1]])
    return float(np.linalg.norm(curl))


def rectangle_loop(center, half_widths, current: float, turns: float = 1.0, axis: int = 2,
                   guard: float = DEFAULT_GUARD, wire_radius: float = 0.0) -> FilamentLoop:
    """Rectangular loop normal to ``axis``, traversed counter-clockwise about it."""
    c = np.asarray(center, dtype=float)
    a, b = [k for k in range(3) if k != axis]
    if axis == 1:
        a, b = b, a
    ha, hb = half_widths
    corners = []
    for sa, sb in ((-1, -1), (1, -1), (1, 1), (-1, 1), (-1, -1)):
        p = c.copy()
        p[a] += sa * ha
        p[b] += sb * hb
        corners.append(p)
    return FilamentLoop(np.array(corners), current, turns, guard, wire_radius)


def regular_polygon_loop(center, radius: float, n: int, current: float, turns: float = 1.0) -> FilamentLoop:
    phi = np.linspace(0.0, 2.0 * np.pi, n + 1)
    v = np.column_stack([radius * np.cos(phi), radius * np.sin(phi), np.zeros(n + 1)]) + np.asarray(center)
    v[-1] = v[0]
    return FilamentLoop(v, current, turns)


def source_from_config(spec) -> SourceField:
    """Build a source from its config description (dict or list of dicts)."""
    if isinstance(spec, list):
        return Sum(tuple(source_from_config(s) for s in spec))
    kind = spec.get("type")
    if kind == "uniform":
        return Uniform(tuple(float(v) for v in spec["h0"]))
    if kind == "filament":
        loop = FilamentLoop(np.asarray(spec["vertices"], dtype=float), float(spec.get("current", 1.0)),
                            float(spec.get("turns", 1.0)), float(spec.get("guard", DEFAULT_GUARD)),
                            float(spec.get("wire_radius", 0.0)))
    elif kind == "rectangle":
        loop = rectangle_loop(spec["center"], spec["half_widths"], float(spec.get("current", 1.0)),
                              float(spec.get("turns", 1.0)), int(spec.get("axis", 2)),
                              float(spec.get("guard", DEFAULT_GUARD)), float(spec.get("wire_radius", 0.0)))
    else:
        raise SourceError(f"unknown source type {kind!r}")
    gauge = spec.get("gauge")
    if gauge is None:
        return loop
    return GaugedLoop(loop, tuple(gauge["lo"]), tuple(gauge["hi"]), float(gauge["ramp"]))
