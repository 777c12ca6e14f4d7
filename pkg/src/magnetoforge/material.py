"""Magnetic energy densities w(b), their derivatives, and the conjugate
coenergy densities w*(h).

Nonlinear isotropic laws are built from B-H samples: the map |b| -> |h| is
interpolated with a Fritsch-Carlson monotone cubic, integrated piecewise to
obtain the energy, and inverted pointwise for the coenergy.  Both densities
therefore describe exactly the same material.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

MU0 = 4e-7 * np.pi
NU0 = 1.0 / MU0
# floor for the differential reluctivity (relative permeability cap 1e5)
GAMMA_FLOOR = 1e-5 * NU0
SMALL_B = 1e-12
INVERSION_MAX_ITER = 200


class MaterialError(ValueError):
    pass


@dataclass(frozen=True)
class BHCurve:
    H: np.ndarray  # A/m
    B: np.ndarray  # T

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        B = np.asarray(self.B, dtype=float)
        if H.shape != B.shape or H.ndim != 1:
            raise MaterialError("H and B must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(H)) and np.all(np.isfinite(B))):
            raise MaterialError("B-H samples must be finite")
        if np.any(H < 0) or np.any(B < 0):
            raise MaterialError("B-H samples must be non-negative")
        if len(H) == 0 or H[0] != 0.0 or B[0] != 0.0:
            H, B = np.r_[0.0, H], np.r_[0.0, B]
        if len(H) < 3:
            raise MaterialError("a B-H curve needs at least 3 samples")
        if np.any(np.diff(H) <= 0) or np.any(np.diff(B) <= 0):
            raise MaterialError("B-H samples must be strictly increasing in H and B")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "B", B)

    def __len__(self):
        return len(self.H)


def load_bh_csv(path) -> BHCurve:
    """Read two columns H [A/m], B [T]; comma or whitespace separated.

    Lines starting with '#' are comments; a non-numeric first line is taken
    as a header.  A (0, 0) sample is prepended when absent.
    """
    rows = []
    for i, line in enumerate(Path(path).read_text().splitlines()):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tok = [t for t in re.split(r"[,\s;]+", line) if t]
        try:
            vals = [float(t) for t in tok]
        except ValueError:
            if not rows:
                continue  # header
            raise MaterialError(f"{path}: non-numeric data in line {i + 1}") from None
        if len(vals) < 2:
            raise MaterialError(f"{path}: line {i + 1} needs two columns")
        rows.append(vals[:2])
    if not rows:
        raise MaterialError(f"{path}: no B-H samples")
    data = np.array(rows)
    return BHCurve(H=data[:, 0], B=data[:, 1])


def saturating_curve(mu_r: float = 1000.0, b_sat: float = 1.6, h_values=None) -> BHCurve:
    """Synthetic steel: B = mu0 H + b_sat * 2/pi * atan(pi mu0 (mu_r - 1) H / (2 b_sat))."""
    if h_values is None:
        h_values = [0, 20, 50, 100, 200, 350, 500, 750, 1000, 1500, 2000, 3000, 5000,
                    7500, 1e4, 2e4, 5e4, 1e5, 2e5, 5e5, 1e6]
    H = np.asarray(h_values, dtype=float)
    B = MU0 * H + b_sat * 2.0 / np.pi * np.arctan(np.pi * MU0 * (mu_r - 1.0) * H / (2.0 * b_sat))
    return BHCurve(H=H, B=B)


def _fritsch_carlson_slopes(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    delta = np.diff(y) / np.diff(x)
    m = np.empty_like(y)
    m[0], m[-1] = delta[0], delta[-1]
    m[1:-1] = 0.5 * (delta[:-1] + delta[1:])
    for k in range(len(delta)):
        a, b = m[k] / delta[k], m[k + 1] / delta[k]
        r = a * a + b * b
        if r > 9.0:
            tau = 3.0 / np.sqrt(r)
            m[k] = tau * a * delta[k]
            m[k + 1] = tau * b * delta[k]
    return m


class EnergyLaw:
    """Interface of an energy density w(b) and its conjugate."""

    gamma: float
    L: float

    def evaluate(self, b):
        """Return w (...), h = dw/db (..., 3), H = d2w/db2 (..., 3, 3)."""
        raise NotImplementedError

    def coenergy(self, h):
        """Return w* (...), b = dw*/dh (..., 3), H* = d2w*/dh2 (..., 3, 3)."""
        raise NotImplementedError


@dataclass(frozen=True)
class LinearLaw(EnergyLaw):
    mu: float = MU0

    @property
    def gamma(self):
        return 1.0 / self.mu

    @property
    def L(self):
        return 1.0 / self.mu

    def evaluate(self, b):
        b = np.asarray(b, dtype=float)
        nu = 1.0 / self.mu
        w = 0.5 * nu * np.einsum("...i,...i->...", b, b)
        H = np.broadcast_to(nu * np.eye(3), b.shape + (3,))
        return w, nu * b, H

    def coenergy(self, h):
        h = np.asarray(h, dtype=float)
        ws = 0.5 * self.mu * np.einsum("...i,...i->...", h, h)
        Hs = np.broadcast_to(self.mu * np.eye(3), h.shape + (3,))
        return ws, self.mu * h, Hs

    def describe(self) -> dict:
        return {"kind": "linear", "mu": self.mu, "mu_r": self.mu / MU0}


@dataclass(frozen=True, eq=False)
class SplineLaw(EnergyLaw):
    """Isotropic law w(b) = W(|b|) with W' the monotone cubic through B -> H.

    Piece k (k < n-1) is the cubic c0 + c1 u + c2 u^2 + c3 u^3 in
    u = s - knots[k]; the last piece is the affine saturation extension.
    """

    knots: np.ndarray  # B samples
    coef: np.ndarray  # (n, 4)
    w_knots: np.ndarray  # W at the knots
    nu_sat: float
    gamma_floor: float = GAMMA_FLOOR
    gamma: float = field(default=np.nan)
    L: float = field(default=np.nan)
    clamped: bool = False

    # -- scalar profile --------------------------------------------------
    def _piece(self, s):
        k = np.searchsorted(self.knots, s, side="right") - 1
        k = np.clip(k, 0, len(self.knots) - 1)
        return k, s - self.knots[k]

    def dW(self, s):
        s = np.asarray(s, dtype=float)
        k, u = self._piece(s)
        c = self.coef[k]
        return c[..., 0] + u * (c[..., 1] + u * (c[..., 2] + u * c[..., 3]))

    def d2W_raw(self, s):
        s = np.asarray(s, dtype=float)
        k, u = self._piece(s)
        c = self.coef[k]
        return c[..., 1] + u * (2.0 * c[..., 2] + 3.0 * u * c[..., 3])

    def d2W(self, s):
        return np.maximum(self.d2W_raw(s), self.gamma_floor)

    def W(self, s):
        s = np.asarray(s, dtype=float)
        k, u = self._piece(s)
        c = self.coef[k]
        return self.w_knots[k] + u * (c[..., 0] + u * (c[..., 1] / 2.0 + u * (c[..., 2] / 3.0 + u * c[..., 3] / 4.0)))

    def inverse_dW(self, hm, rtol: float = 1e-12):
        """Solve W'(s) = hm for s >= 0 by safeguarded Newton-bisection."""
        hm = np.asarray(hm, dtype=float)
        shape = hm.shape
        hm = hm.reshape(-1)
        yk = self.coef[:, 0]
        k = np.clip(np.searchsorted(yk, hm, side="right") - 1, 0, len(yk) - 1)
        s = np.empty_like(hm)
        last = k == len(yk) - 1
        s[last] = self.knots[-1] + (hm[last] - yk[-1]) / self.nu_sat
        idx = np.nonzero(~last)
        if idx[0].size:
            kk = k[idx]
            c = self.coef[kk]
            target = hm[idx]
            lo = np.zeros_like(target)
            hi = self.knots[kk + 1] - self.knots[kk]
            u = (target - yk[kk]) / (yk[kk + 1] - yk[kk]) * hi
            active = np.ones(target.shape, dtype=bool)
            for _ in range(INVERSION_MAX_ITER):
                ca = c[active]
                ua = u[active]
                F = ca[:, 0] + ua * (ca[:, 1] + ua * (ca[:, 2] + ua * ca[:, 3])) - target[active]
                dF = ca[:, 1] + ua * (2.0 * ca[:, 2] + 3.0 * ua * ca[:, 3])
                lo_a, hi_a = lo[active], hi[active]
                lo_a = np.where(F < 0, ua, lo_a)
                hi_a = np.where(F > 0, ua, hi_a)
                with np.errstate(divide="ignore", invalid="ignore"):
                    un = ua - F / dF
                bad = ~np.isfinite(un) | (un <= lo_a) | (un >= hi_a) | (dF <= 0)
                un = np.where(bad, 0.5 * (lo_a + hi_a), un)
                un = np.where(F == 0, ua, un)
                scale = self.knots[kk[active]] + un
                done = (np.abs(un - ua) <= rtol * np.maximum(scale, 1e-300)) | (F == 0) | (hi_a - lo_a <= 4e-16 * scale)
                u[active] = un
                lo[active], hi[active] = lo_a, hi_a
                ai = np.nonzero(active)[0]
                active[ai[done]] = False
                if not active.any():
                    break
            else:
                raise MaterialError("coenergy inversion did not converge (corrupt law?)")
            s[idx] = self.knots[kk] + u
        return s.reshape(shape)

    # -- vector evaluation -----------------------------------------------
    def evaluate(self, b):
        b = np.asarray(b, dtype=float)
        s = np.linalg.norm(b, axis=-1)
        small = s < SMALL_B
        ss = np.where(small, 1.0, s)
        dW = self.dW(s)
        d2 = self.d2W(s)
        d20 = float(self.d2W(0.0))
        sec = np.where(small, d20, dW / ss)
        bh = b / ss[..., None]
        P = np.einsum("...i,...j->...ij", bh, bh)
        H = d2[..., None, None] * P + sec[..., None, None] * (np.eye(3) - P)
        H = np.where(small[..., None, None], d20 * np.eye(3), H)
        return self.W(s), sec[..., None] * b, H

    def coenergy(self, h):
        h = np.asarray(h, dtype=float)
        hm = np.linalg.norm(h, axis=-1)
        s = self.inverse_dW(hm)
        small = s < SMALL_B
        hs = np.where(hm > 0, hm, 1.0)
        d2 = self.d2W(s)
        d20 = float(self.d2W(0.0))
        ratio = np.where(small, 1.0 / d20, s / hs)
        hh = h / hs[..., None]
        P = np.einsum("...i,...j->...ij", hh, hh)
        Hs = (1.0 / d2)[..., None, None] * P + ratio[..., None, None] * (np.eye(3) - P)
        Hs = np.where(small[..., None, None], np.eye(3) / d20, Hs)
        ws = hm * s - self.W(s)
        return ws, ratio[..., None] * h, Hs

    @property
    def b_last(self) -> float:
        return float(self.knots[-1])

    def describe(self) -> dict:
        return {"kind": "bh_spline", "samples": len(self.knots), "b_last": self.b_last,
                "nu_sat": self.nu_sat, "gamma": self.gamma, "L": self.L,
                "gamma_floor": self.gamma_floor, "clamped": self.clamped}


def fit_energy(curve: BHCurve, gamma_floor: float = GAMMA_FLOOR) -> SplineLaw:
    x, y = curve.B, curve.H
    m = _fritsch_carlson_slopes(x, y)
    dx = np.diff(x)
    delta = np.diff(y) / dx
    n = len(x)
    coef = np.zeros((n, 4))
    coef[:-1, 0] = y[:-1]
    coef[:-1, 1] = m[:-1]
    coef[:-1, 2] = (3.0 * delta - 2.0 * m[:-1] - m[1:]) / dx
    coef[:-1, 3] = (m[:-1] + m[1:] - 2.0 * delta) / dx**2
    nu_sat = max(delta[-1], 1e-3 * NU0)
    coef[-1, :2] = y[-1], nu_sat
    c = coef[:-1]
    inc = dx * (c[:, 0] + dx * (c[:, 1] / 2.0 + dx * (c[:, 2] / 3.0 + dx * c[:, 3] / 4.0)))
    w_knots = np.r_[0.0, np.cumsum(inc)]
    law = SplineLaw(knots=x.copy(), coef=coef, w_knots=w_knots, nu_sat=float(nu_sat),
                    gamma_floor=gamma_floor)
    gamma, L, clamped = _scan_constants(law)
    if not gamma > 0:
        raise MaterialError("fitted law is not strongly monotone")
    if clamped:
        logger.warning("differential reluctivity clamped at %.3g A/(m T)", gamma_floor)
    object.__setattr__(law, "gamma", gamma)
    object.__setattr__(law, "L", L)
    object.__setattr__(law, "clamped", clamped)
    return law


def _scan_constants(law: SplineLaw, n: int = 10_000):
    s = np.linspace(0.0, 2.0 * law.b_last, n)
    s = np.union1d(s, law.knots)
    raw = law.d2W_raw(s)
    d2 = np.maximum(raw, law.gamma_floor)
    return float(d2.min()), float(d2.max()), bool(np.any(raw < law.gamma_floor))


@dataclass(frozen=True)
class CoenergyLaw:
    law: EnergyLaw
    tol: float = 1e-12

    def evaluate(self, h):
        return self.law.coenergy(h)


def energy_eval(law: EnergyLaw, b):
    return law.evaluate(b)


def coenergy_eval(claw, h):
    if isinstance(claw, CoenergyLaw):
        return claw.evaluate(h)
    return claw.coenergy(h)


def verify_constants(law: EnergyLaw) -> tuple[float, float]:
    """(gamma, L): bounds of the differential reluctivity over a dense scan."""
    if isinstance(law, SplineLaw):
        gamma, L, _ = _scan_constants(law)
    else:
        gamma, L = law.gamma, law.L
    if not gamma > 0:
        raise MaterialError(f"law is not strongly monotone (gamma={gamma})")
    return gamma, L


def secant_slack(law: EnergyLaw, n: int = 1000, seed: int = 0, b_max: float | None = None):
    """Worst normalized slack of the monotonicity and Lipschitz conditions
    over random pairs; both values are >= 0 when the conditions hold."""
    gamma, L = verify_constants(law)
    if b_max is None:
        b_max = 2.0 * law.b_last if isinstance(law, SplineLaw) else 2.0
    rng = np.random.default_rng(seed)
    b1 = random_vectors(rng, n, b_max)
    b2 = random_vectors(rng, n, b_max)
    _, h1, _ = law.evaluate(b1)
    _, h2, _ = law.evaluate(b2)
    db, dh = b1 - b2, h1 - h2
    nb2 = np.einsum("ij,ij->i", db, db)
    mono = (np.einsum("ij,ij->i", dh, db) - gamma * nb2) / (L * nb2)
    lip = (L * np.sqrt(nb2) - np.linalg.norm(dh, axis=1)) / (L * np.sqrt(nb2))
    return float(mono.min()), float(lip.min())


def random_vectors(rng, n: int, r_max: float) -> np.ndarray:
    """n vectors with uniformly random direction and length in [0, r_max]."""
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * rng.uniform(0.0, r_max, size=(n, 1))


def fenchel_gap(law: EnergyLaw, b) -> np.ndarray:
    """|w(b) + w*(dw(b)) - <dw(b), b>| normalized by max(1, |w(b)|)."""
    w, h, _ = law.evaluate(b)
    ws, _, _ = law.coenergy(h)
    gap = np.abs(w + ws - np.einsum("...i,...i->...", h, b))
    return gap / np.maximum(1.0, np.abs(w))


def law_summary(law: EnergyLaw, n_table: int = 25) -> dict:
    gamma, L = verify_constants(law)
    b_last = law.b_last if isinstance(law, SplineLaw) else 2.0
    rng = np.random.default_rng(0)
    b = random_vectors(rng, 1000, 2.0 * b_last)
    _, h, _ = law.evaluate(b)
    _, b_back, _ = law.coenergy(h)
    roundtrip = float((np.linalg.norm(b_back - b, axis=1) / np.maximum(np.linalg.norm(b, axis=1), 1e-300)).max())
    s = np.linspace(0.0, 2.0 * b_last, n_table)
    bb = np.column_stack([s, np.zeros_like(s), np.zeros_like(s)])
    w, hh, _ = law.evaluate(bb)
    ws, _, _ = law.coenergy(hh)
    table = [{"b": float(a), "h": float(c), "w": float(d), "w_star": float(e)}
             for a, c, d, e in zip(s, hh[:, 0], w, ws)]
    out = dict(law.describe())
    out.update({"gamma": gamma, "L": L, "roundtrip_max_rel_error": roundtrip,
                "fenchel_max_gap": float(fenchel_gap(law, b).max()), "table": table})
    return out
