"""Three-way comparison runs: the same mesh, material laws and source
solved with the vector, scalar and mixed formulations.

Each row of the comparison table is recomputable from the per-formulation
reports plus the two cross-formulation field differences returned here.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .formulations import make_formulation
from .mesh import Mesh
from .solver import NewtonConfig, SolveReport, newton_solve

logger = logging.getLogger(__name__)

KINDS = ("vector", "scalar", "mixed")
CSV_COLUMNS = (
    "mesh_level", "p", "excitation",
    "iters_vector", "iters_scalar", "iters_mixed",
    "dofs_vector", "dofs_scalar", "dofs_mixed",
    "cg_total_vector", "cg_total_scalar", "cg_total_mixed",
    "dof_ratio_vector_scalar",
    "dh_mixed_scalar", "dh_mixed_scalar_rel",
    "db_mixed_vector", "db_mixed_vector_rel",
)


@dataclass
class Solution:
    kind: str
    formulation: object
    x: np.ndarray
    report: SolveReport
    seconds: float

    @property
    def disc(self):
        return self.formulation.disc

    def b(self) -> np.ndarray:
        return self.formulation.b_field(self.x)

    def h(self) -> np.ndarray:
        return self.formulation.h_field(self.x)

    def norms(self) -> dict:
        """L2 norms of b and h, overall and per region."""
        d = self.disc
        b, h = self.b(), self.h()
        out = {"b_l2": d.l2_norm(b), "h_l2": d.l2_norm(h)}
        for tag in d.mesh.regions:
            out[f"b_l2_region_{tag}"] = d.l2_norm(b, tag)
            out[f"h_l2_region_{tag}"] = d.l2_norm(h, tag)
        bmag = np.linalg.norm(b, axis=-1)
        out["b_max"] = float(bmag.max())
        return out

    def dofs_total(self) -> int:
        return int(self.report.dofs["total"])


def solve(kind: str, mesh: Mesh, p: int, laws: dict, source, config: NewtonConfig | None = None) -> Solution:
    """Build one formulation and run the Newton solver on it."""
    t0 = time.perf_counter()
    F = make_formulation(kind, mesh, p, laws, source)
    x, report = newton_solve(F, config)
    return Solution(kind, F, x, report, time.perf_counter() - t0)


def field_differences(mixed: Solution, scalar: Solution, vector: Solution) -> dict:
    """L2 differences |h_mixed - h_scalar| and |b_mixed - curl a|.

    h_mixed is hs - grad psi of the mixed solution.  All fields are
    compared at the quadrature points of the mixed discretization; the
    scalar one uses the same rule, and curl a is constant per element.
    """
    d = mixed.disc
    if scalar.disc.p != d.p:
        raise ValueError("mixed and scalar solutions must share the polynomial degree")
    hm = mixed.h()
    dh = d.l2_norm(hm - scalar.h())
    bm = mixed.b()
    curl_a = vector.formulation.curl_a(vector.x)[:, None, :]
    db = d.l2_norm(bm - curl_a)
    hn, bn = d.l2_norm(hm), d.l2_norm(bm)
    return {
        "dh_mixed_scalar": dh,
        "dh_mixed_scalar_rel": dh / hn if hn > 0 else 0.0,
        "db_mixed_vector": db,
        "db_mixed_vector_rel": db / bn if bn > 0 else 0.0,
    }


@dataclass
class ComparisonRow:
    mesh_level: int
    p: int
    excitation: float
    solutions: dict = field(default_factory=dict)
    differences: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        row = {"mesh_level": self.mesh_level, "p": self.p, "excitation": self.excitation}
        for k in KINDS:
            row[f"iters_{k}"] = self.solutions[k].report.iterations
        for k in KINDS:
            row[f"dofs_{k}"] = self.solutions[k].dofs_total()
        for k in KINDS:
            row[f"cg_total_{k}"] = self.solutions[k].report.cg_total
        row["dof_ratio_vector_scalar"] = row["dofs_vector"] / row["dofs_scalar"]
        row.update(self.differences)
        return row


def compare(mesh: Mesh, p: int, laws: dict, source, config: NewtonConfig | None = None,
            mesh_level: int = 0, excitation: float = float("nan")) -> ComparisonRow:
    sols = {}
    for kind in KINDS:
        sols[kind] = solve(kind, mesh, p, laws, source, config)
        logger.info("level %s p=%d %s: %d Newton steps, %d CG steps, %.1f s", mesh_level, p, kind,
                    sols[kind].report.iterations, sols[kind].report.cg_total, sols[kind].seconds)
    diffs = field_differences(sols["mixed"], sols["scalar"], sols["vector"])
    return ComparisonRow(mesh_level, p, excitation, sols, diffs)


def run_suite(cfg, levels=None, degrees=None, excitations=None):
    """All comparison rows for a run configuration.

    Defaults come from the config's ``benchmark`` section; without one, a
    single row for the configured mesh, degree and source is produced.
    """
    bench = cfg.benchmark
    levels = levels or bench.get("levels") or [None]
    degrees = degrees or bench.get("p") or [cfg.p]
    excitations = excitations or bench.get("ampere_turns") or [None]
    rows = []
    for at in excitations:
        source = cfg.build_source(at)
        exc = at if at is not None else _rating(source)
        for p in degrees:
            for n in levels:
                mesh = cfg.build_mesh(n)
                laws = cfg.build_laws(mesh.regions)
                level = n if n is not None else cfg.mesh_spec.get("box", {}).get("n", 0)
                rows.append(compare(mesh, p, laws, source, cfg.newton, level, exc))
    return rows


def _rating(source) -> float:
    try:
        return float(source.ampere_turns)
    except Exception:
        return float("nan")


def write_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for r in rows:
            d = r.as_dict() if isinstance(r, ComparisonRow) else r
            w.writerow({k: d[k] for k in CSV_COLUMNS})


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ints = {c for c in CSV_COLUMNS if c.startswith(("iters_", "dofs_", "cg_total_"))} | {"mesh_level", "p"}
    return [{k: (int(v) if k in ints else float(v)) for k, v in r.items()} for r in rows]
