"""Command-line front end: config loading, result cache, artifacts.

Every command reads one TOML config, validates it against the module
preconditions, and derives a content hash from the canonical serialized
form (directories excluded). Artifacts are computed once under
cache/<hash>/ and published to the output directory with the hash in
the file name; a later run with the same config finds the manifest and
skips the computation, so repeated runs are byte-identical by
construction and fresh runs are byte-identical because the whole
pipeline is deterministic.

Plots are small hand-rolled SVG polyline renders of the CSV artifacts;
nothing interactive, no timestamps, fixed number formatting.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import math
import os
import shutil
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

import numpy as np

from . import bands, dispersion, fem, geometry, quasimode
from . import cell as cell_mod
from .dispersion import FloquetPoint, ModeLabel
from .geometry import HoleShape, PerforatedCell


class ConfigError(Exception):
    """Carries field-level validation messages."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class RunConfig:
    H: float
    hole: Optional[HoleShape]
    mirror: bool
    N: tuple
    m: tuple
    P: int
    h: float
    L: Optional[float]
    eta_point: float
    modes: tuple
    n_uniform: int
    refine_per_node: int
    solver_tol: float
    extrapolate: bool
    output_dir: str
    cache_dir: str

    def canonical_text(self) -> str:
        """Stable serialization of everything that affects results."""
        if self.hole is None:
            hole = "none"
        elif self.hole.kind == "polygon":
            pts = ";".join(f"{x!r},{y!r}" for x, y in self.hole.vertices)
            hole = f"polygon[{pts}]"
        else:
            cx, cy = self.hole.center
            hole = (f"{self.hole.kind}[{cx!r},{cy!r};"
                    f"{self.hole.rx!r},{self.hole.ry!r}]")
        items = {
            "H": repr(self.H),
            "hole": hole,
            "mirror": str(self.mirror).lower(),
            "N": ",".join(str(n) for n in self.N),
            "m": ",".join(str(v) for v in self.m),
            "P": str(self.P),
            "h": repr(self.h),
            "L": "auto" if self.L is None else repr(self.L),
            "eta_point": repr(self.eta_point),
            "modes": ",".join(str(j) for j in self.modes),
            "n_uniform": str(self.n_uniform),
            "refine_per_node": str(self.refine_per_node),
            "solver_tol": repr(self.solver_tol),
            "extrapolate": str(self.extrapolate).lower(),
        }
        return "\n".join(f"{k}={items[k]}" for k in sorted(items)) + "\n"

    @property
    def run_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:12]


_TOP_KEYS = {"H", "N", "m", "P", "h", "L", "eta_point", "modes", "n_uniform",
             "refine_per_node", "solver_tol", "extrapolate", "output_dir",
             "cache_dir", "hole"}
_HOLE_KEYS = {"kind", "center", "radius", "rx", "ry", "vertices", "mirror"}


def _parse_hole(tbl, H, errors):
    kind = tbl.get("kind", "none")
    for key in tbl:
        if key not in _HOLE_KEYS:
            errors.append(f"hole.{key}: unknown key")
    mirror = tbl.get("mirror", False)
    if not isinstance(mirror, bool):
        errors.append("hole.mirror: must be a boolean")
        mirror = False
    if kind == "none":
        return None, mirror
    try:
        if kind == "disk":
            hole = HoleShape.disk(tbl.get("center", (0.0, H / 2.0)),
                                  tbl.get("radius", 0.0))
        elif kind == "ellipse":
            hole = HoleShape.ellipse(tbl.get("center", (0.0, H / 2.0)),
                                     tbl.get("rx", 0.0), tbl.get("ry", 0.0))
        elif kind == "polygon":
            hole = HoleShape.polygon(tbl.get("vertices", ()))
        else:
            errors.append(f"hole.kind: unknown kind {kind!r}")
            return None, mirror
    except (ValueError, TypeError, IndexError) as exc:
        errors.append(f"hole: {exc}")
        return None, mirror
    rep = geometry.validate_hole(hole, H)
    if not rep.ok:
        errors.extend(f"hole: {msg}" for msg in rep.messages)
        return None, mirror
    if mirror and not hole.is_mirror_symmetric(H):
        errors.append("hole.mirror: declared but the shape is not "
                      "symmetric about the midline")
    return hole, mirror


def load_config(path, env=None) -> RunConfig:
    env = os.environ if env is None else env
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except OSError as exc:
        raise ConfigError(f"config: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config: invalid TOML: {exc}") from exc

    errors = []
    for key in raw:
        if key not in _TOP_KEYS:
            errors.append(f"{key}: unknown key")

    def scalar(key, default, kinds, desc):
        v = raw.get(key, default)
        if v is None:
            return v
        if isinstance(v, bool) or not isinstance(v, kinds):
            errors.append(f"{key}: must be {desc}")
            return default
        return v

    H = scalar("H", None, (int, float), "a number")
    if H is None:
        errors.append("H: required")
        H = 1.0
    elif H <= 0:
        errors.append("H: must be positive")
        H = 1.0

    N = raw.get("N", [8])
    if not (isinstance(N, list) and N
            and all(isinstance(n, int) and n >= 1 for n in N)):
        errors.append("N: must be a nonempty list of integers >= 1")
        N = [8]
    m = raw.get("m", [1])
    if not (isinstance(m, list) and m
            and all(isinstance(v, int) and v >= 1 for v in m)):
        errors.append("m: must be a nonempty list of integers >= 1")
        m = [1]
    elif max(m) > bands.admissible_m_max(H):
        errors.append(f"m: index {max(m)} exceeds the admissible maximum "
                      f"{bands.admissible_m_max(H)} at H={H}")
    modes = raw.get("modes", [0])
    if not (isinstance(modes, list) and modes
            and all(isinstance(j, int) for j in modes)):
        errors.append("modes: must be a nonempty list of integers")
        modes = [0]
    if len(set(modes)) != len(modes):
        errors.append("modes: duplicate entries")

    P = scalar("P", 4, int, "an integer")
    if P < 1:
        errors.append("P: must be >= 1")
        P = 4
    h = scalar("h", 0.02, (int, float), "a number")
    if h <= 0:
        errors.append("h: must be positive")
        h = 0.02
    L = scalar("L", None, (int, float), "a number")
    if L is not None and L <= 0:
        errors.append("L: must be positive")
        L = None
    eta_point = scalar("eta_point", 0.5, (int, float), "a number")
    if not -math.pi <= eta_point <= math.pi:
        errors.append("eta_point: must lie in [-pi, pi]")
        eta_point = 0.5
    n_uniform = scalar("n_uniform", 33, int, "an integer")
    if n_uniform < 3 or n_uniform % 2 == 0:
        errors.append("n_uniform: must be an odd integer >= 3 so the grid "
                      "contains eta = 0 and both endpoints")
        n_uniform = 33
    refine_per_node = scalar("refine_per_node", 8, int, "an integer")
    if refine_per_node < 2:
        errors.append("refine_per_node: must be >= 2")
        refine_per_node = 8
    solver_tol = scalar("solver_tol", 0.0, (int, float), "a number")
    if solver_tol < 0:
        errors.append("solver_tol: must be >= 0")
        solver_tol = 0.0
    extrapolate = raw.get("extrapolate", True)
    if not isinstance(extrapolate, bool):
        errors.append("extrapolate: must be a boolean")
        extrapolate = True

    hole_tbl = raw.get("hole", {})
    if not isinstance(hole_tbl, dict):
        errors.append("hole: must be a table")
        hole_tbl = {}
    hole, mirror = _parse_hole(hole_tbl, H, errors)

    output_dir = env.get("PERFBAND_OUTPUT_DIR", raw.get("output_dir", "out"))
    cache_dir = env.get("PERFBAND_CACHE_DIR", raw.get("cache_dir", "cache"))
    for key, val in (("output_dir", output_dir), ("cache_dir", cache_dir)):
        if not isinstance(val, str) or not val:
            errors.append(f"{key}: must be a nonempty string")

    if errors:
        raise ConfigError(errors)
    return RunConfig(H=float(H), hole=hole, mirror=mirror,
                     N=tuple(N), m=tuple(m), P=P, h=float(h),
                     L=None if L is None else float(L),
                     eta_point=float(eta_point), modes=tuple(modes),
                     n_uniform=n_uniform, refine_per_node=refine_per_node,
                     solver_tol=float(solver_tol), extrapolate=extrapolate,
                     output_dir=str(output_dir), cache_dir=str(cache_dir))


# ---------------------------------------------------------------------------
# svg rendering (thin, deterministic, over the CSV data)


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#e377c2", "#7f7f7f")


def _render_polylines(path, series, log=False,
                      width=640, height=480, margin=54) -> None:
    """series: list of (xs, ys) pairs, drawn as colored polylines."""
    xs_all = np.concatenate([np.asarray(s[0], float) for s in series])
    ys_all = np.concatenate([np.asarray(s[1], float) for s in series])
    if log:
        xs_all, ys_all = np.log10(xs_all), np.log10(ys_all)
    x0, x1 = float(xs_all.min()), float(xs_all.max())
    y0, y1 = float(ys_all.min()), float(ys_all.max())
    if x1 - x0 < 1e-300:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 - y0 < 1e-300:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def mx(x):
        return margin + (x - x0) / (x1 - x0) * (width - 2 * margin)

    def my(y):
        return height - margin - (y - y0) / (y1 - y0) * (height - 2 * margin)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
           f'height="{height}" viewBox="0 0 {width} {height}">',
           f'<rect x="{margin}" y="{margin}" width="{width - 2 * margin}" '
           f'height="{height - 2 * margin}" fill="none" stroke="#000"/>']
    for lab, v, anch in ((x0, (mx(x0), height - margin + 16), "middle"),
                         (x1, (mx(x1), height - margin + 16), "middle"),
                         (y0, (margin - 6, my(y0) + 4), "end"),
                         (y1, (margin - 6, my(y1) + 4), "end")):
        out.append(f'<text x="{v[0]:.2f}" y="{v[1]:.2f}" font-size="12" '
                   f'text-anchor="{anch}">{lab:.6g}</text>')
    for i, (sx, sy) in enumerate(series):
        sx, sy = np.asarray(sx, float), np.asarray(sy, float)
        if log:
            sx, sy = np.log10(sx), np.log10(sy)
        pts = " ".join(f"{mx(a):.2f},{my(b):.2f}" for a, b in zip(sx, sy))
        color = _PALETTE[i % len(_PALETTE)]
        out.append(f'<polyline points="{pts}" fill="none" '
                   f'stroke="{color}" stroke-width="1.5"/>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


def _render_band_rects(path, band_list, gaps,
                       width=320, height=480, margin=54) -> None:
    top = max(hi for _, _, hi in band_list)
    if top <= 0:
        top = 1.0

    def my(v):
        return height - margin - v / top * (height - 2 * margin)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
           f'height="{height}" viewBox="0 0 {width} {height}">',
           f'<rect x="{margin}" y="{margin}" width="{width - 2 * margin}" '
           f'height="{height - 2 * margin}" fill="none" stroke="#000"/>']
    x = margin + 30
    w = width - 2 * margin - 60
    for i, (p, lo, hi) in enumerate(band_list):
        color = _PALETTE[i % len(_PALETTE)]
        out.append(f'<rect x="{x}" y="{my(hi):.2f}" width="{w}" '
                   f'height="{my(lo) - my(hi):.2f}" fill="{color}" '
                   f'fill-opacity="0.5" stroke="{color}"/>')
        out.append(f'<text x="{x + w + 6}" y="{(my(lo) + my(hi)) / 2:.2f}" '
                   f'font-size="12">{p}</text>')
    for lo, hi in gaps:
        out.append(f'<rect x="{x}" y="{my(hi):.2f}" width="{w}" '
                   f'height="{my(lo) - my(hi):.2f}" fill="none" '
                   f'stroke="#000" stroke-dasharray="4 3"/>')
    out.append(f'<text x="{margin - 6}" y="{my(0) + 4:.2f}" font-size="12" '
               f'text-anchor="end">0</text>')
    out.append(f'<text x="{margin - 6}" y="{my(top) + 4:.2f}" font-size="12" '
               f'text-anchor="end">{top:.6g}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


def _read_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


# ---------------------------------------------------------------------------
# commands; each writes artifacts into the cache directory and returns
# the list of file names it produced


def _cmd_dispersion(cfg: RunConfig, cdir: Path):
    etas = np.linspace(-math.pi, math.pi, cfg.n_uniform)
    dispersion.write_spectrum_csv(cdir / "spectrum.csv", cfg.H, etas, cfg.P)
    _, rows = _read_csv(cdir / "spectrum.csv")
    series = []
    for p in range(1, cfg.P + 1):
        sel = [(float(r[0]), float(r[2])) for r in rows if int(r[1]) == p]
        series.append(([a for a, _ in sel], [b for _, b in sel]))
    _render_polylines(cdir / "dispersion.svg", series)
    return ["spectrum.csv", "dispersion.svg"]


def _cmd_mesh(cfg: RunConfig, cdir: Path):
    cell = PerforatedCell(H=cfg.H, N=cfg.N[0], hole=cfg.hole)
    mesh = geometry.build_perforated_mesh(cell, cfg.h)
    geometry.write_mesh_text(mesh, cdir / "mesh.txt")
    return ["mesh.txt"]


def _cmd_solve(cfg: RunConfig, cdir: Path):
    cell = PerforatedCell(H=cfg.H, N=cfg.N[0], hole=cfg.hole)
    mesh = geometry.build_perforated_mesh(cell, cfg.h)
    pair = fem.assemble(mesh, cfg.eta_point)
    res = fem.solve_lowest(pair, cfg.P, tol=cfg.solver_tol)
    rows = [(cfg.eta_point, cell.epsilon, p + 1,
             res.values[p], res.residuals[p]) for p in range(cfg.P)]
    fem.write_solve_csv(cdir / "solve.csv", rows)
    vec_path = fem.save_eigvecs(res, cdir)
    return ["solve.csv", os.path.basename(vec_path)]


def _cmd_cell(cfg: RunConfig, cdir: Path):
    sol = cell_mod.solve_cell_problem(cfg.hole, cfg.H, cfg.h, L=cfg.L)
    cell_mod.write_cell_csv(cdir / "cell.csv", [sol])
    return ["cell.csv"]


def _cmd_quasimode(cfg: RunConfig, cdir: Path):
    sol = cell_mod.solve_cell_problem(cfg.hole, cfg.H, cfg.h, L=cfg.L)
    rows = []
    for n in cfg.N:
        cell = PerforatedCell(H=cfg.H, N=n, hole=cfg.hole)
        mesh = geometry.build_perforated_mesh(cell, cfg.h)
        pair = fem.assemble(mesh, cfg.eta_point)
        opinv = fem.make_shift_invert(pair)
        qs = [quasimode.build_quasimode(ModeLabel(j, 0), cfg.eta_point,
                                        cell, sol, mesh)
              for j in cfg.modes]
        for qi, q in enumerate(qs):
            delta = quasimode.residual(q, pair, opinv=opinv)
            ratio = quasimode.norm_check(q, pair)
            ortho = max((quasimode.almost_orthogonality(q, qo, pair)
                         for qj, qo in enumerate(qs) if qj != qi),
                        default=0.0)
            xi = cfg.eta_point + 2.0 * math.pi * q.label.j
            rows.append((cell.epsilon, cfg.eta_point,
                         1 if xi >= 0 else -1, q.label.j,
                         delta, ratio, ortho))
    quasimode.write_quasimode_csv(cdir / "quasimode.csv", rows)
    return ["quasimode.csv"]


def _band_lambda_cap(H: float, P: int) -> float:
    cap = 0.0
    for eta in np.linspace(-math.pi, math.pi, 65):
        spec = dispersion.sorted_spectrum(FloquetPoint(eta=eta, H=H), P)
        cap = max(cap, spec.levels[-1].value)
    return cap + 1.0


def _cmd_bands(cfg: RunConfig, cdir: Path):
    cell = PerforatedCell(H=cfg.H, N=cfg.N[0], hole=cfg.hole)
    grid = bands.build_eta_grid(cfg.H, cell.epsilon,
                                _band_lambda_cap(cfg.H, cfg.P),
                                n_uniform=cfg.n_uniform,
                                refine_per_node=cfg.refine_per_node)
    bs = bands.compute_bands(cell, grid, cfg.P, h=cfg.h,
                             extrapolate=cfg.extrapolate and
                             cfg.hole is not None)
    bands.write_bands_csv(cdir / "bands.csv", bs)
    bands.write_curves_csv(cdir / "curves.csv", bs)
    series = [(bs.etas, bs.values[:, p]) for p in range(cfg.P)]
    _render_polylines(cdir / "curves.svg", series)
    _render_band_rects(cdir / "bands.svg", bs.bands, bs.gaps)
    return ["bands.csv", "curves.csv", "curves.svg", "bands.svg"]


def _cmd_sweep(cfg: RunConfig, cdir: Path):
    eps = [1.0 / n for n in cfg.N]
    rep = bands.convergence_sweep(cfg.H, cfg.hole, eps, list(cfg.m),
                                  h=cfg.h, n_uniform=cfg.n_uniform,
                                  refine_per_node=cfg.refine_per_node)
    bands.write_rate_csv(cdir / "rate.csv", rep)
    series = []
    for m in sorted(rep.entries):
        e = rep.entry(m)
        if np.all(e.sup_err > 0):
            series.append((e.eps, e.sup_err))
    if series:
        _render_polylines(cdir / "rate.svg", series, log=True)
        return ["rate.csv", "rate.svg"]
    return ["rate.csv"]


_COMMANDS = {
    "dispersion": _cmd_dispersion,
    "mesh": _cmd_mesh,
    "solve": _cmd_solve,
    "cell": _cmd_cell,
    "quasimode": _cmd_quasimode,
    "bands": _cmd_bands,
    "sweep": _cmd_sweep,
}


# ---------------------------------------------------------------------------
# cache and publication


def _run_cached(command: str, cfg: RunConfig):
    cdir = Path(cfg.cache_dir) / cfg.run_hash
    manifest = cdir / f"manifest-{command}.txt"
    if manifest.exists():
        names = manifest.read_text().split()
        if all((cdir / n).exists() for n in names):
            return cdir, names, True
    cdir.mkdir(parents=True, exist_ok=True)
    names = _COMMANDS[command](cfg, cdir)
    manifest.write_text("\n".join(names) + "\n")
    return cdir, names, False


def _publish(cfg: RunConfig, cdir: Path, names):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    published = []
    for name in names:
        stem, _, suffix = name.rpartition(".")
        dst = out / f"{stem}-{cfg.run_hash}.{suffix}"
        shutil.copyfile(cdir / name, dst)
        published.append(dst)
    return published


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="perfband",
        description="Floquet band structures of a periodically perforated "
                    "waveguide cell and their homogenization checks.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, blurb in (
            ("dispersion", "limit dispersion curves (CSV + SVG)"),
            ("mesh", "export the cell triangulation"),
            ("solve", "single (epsilon, eta) eigensolve"),
            ("cell", "boundary-layer problem on the strip"),
            ("quasimode", "quasimode residual report"),
            ("bands", "band structure and gaps"),
            ("sweep", "convergence rates against the limit curves")):
        p = sub.add_parser(name, help=blurb)
        p.add_argument("config", help="TOML config file")
    ns = parser.parse_args(argv)

    try:
        cfg = load_config(ns.config)
    except ConfigError as exc:
        for msg in exc.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return 2

    try:
        cdir, names, hit = _run_cached(ns.command, cfg)
    except Exception as exc:
        print(f"{ns.command} failed: {exc}", file=sys.stderr)
        return 1
    if hit:
        print(f"cache hit {cfg.run_hash}", file=sys.stderr)
    for path in _publish(cfg, cdir, names):
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
