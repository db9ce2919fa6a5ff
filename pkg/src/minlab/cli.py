"""Command-line front end (``minlab``).

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, gallery
from .errors import MinlabError, ValidationError

log = logging.getLogger("minlab")

SCHEMA_VERSION = 1
DEFAULTS = {
    "surface": None,
    "gallery_file": None,
    "level": 5,
    "radii": [20.0, 50.0],
    "delta": 0.25,
    "tol": None,
    "out": None,
    "format": ["json"],
    "R": 50.0,
    "all": False,
}


# ---------------------------------------------------------------------------
# deterministic serialisation


def _fmt(x) -> str:
    if isinstance(x, bool) or x is None:
        return json.dumps(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x) or math.isinf(x):
            return json.dumps(None if math.isnan(x) else ("inf" if x > 0 else "-inf"))
        return format(x, ".17g")
    if isinstance(x, str):
        return json.dumps(x, ensure_ascii=False)
    if isinstance(x, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_fmt(v)}" for k, v in sorted(x.items())) + "}"
    if isinstance(x, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(v) for v in x) + "]"
    raise TypeError(f"cannot serialise {type(x).__name__}")


def dumps(obj) -> str:
    """JSON with sorted keys and floats at 17 significant digits."""
    return _fmt(obj) + "\n"


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(text)


def write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format(v, ".17g") if isinstance(v, float) else v for v in row])


def write_svg(path: Path, draw) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "minlab"
    fig, ax = plt.subplots(figsize=(6, 4))
    draw(ax)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    command: str
    surface: Optional[str] = None
    gallery_file: Optional[str] = None
    level: int = 5
    radii: list = field(default_factory=lambda: [20.0, 50.0])
    delta: float = 0.25
    tol: Optional[float] = None
    out: Optional[str] = None
    format: list = field(default_factory=lambda: ["json"])
    R: float = 50.0
    all: bool = False

    def validate(self) -> None:
        if not 2 <= self.level <= 8:
            raise ValidationError("level must lie in [2, 8]")
        r = [float(x) for x in self.radii]
        if not r or any(x <= 0 for x in r) or any(b <= a for a, b in zip(r, r[1:])):
            raise ValidationError("radii must be positive and strictly ascending")
        self.radii = r
        if not 0 < self.delta < 1:
            raise ValidationError("delta must lie in (0, 1)")
        if self.tol is not None and self.tol <= 0:
            raise ValidationError("tol must be positive")
        if self.R <= 0:
            raise ValidationError("R must be positive")
        bad = set(self.format) - {"json", "csv", "svg"}
        if bad:
            raise ValidationError(f"unknown format(s): {sorted(bad)}")

    def load_surface(self):
        if self.gallery_file:
            return gallery.load_file(self.gallery_file)
        if not self.surface:
            raise ValidationError("give --surface or --gallery-file")
        return gallery.load(self.surface)

    def out_dir(self) -> Optional[Path]:
        return Path(self.out) if self.out else None


def build_config(args: argparse.Namespace) -> RunConfig:
    """CLI flags override the config file, which overrides defaults."""
    merged = dict(DEFAULTS)
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {args.config}: {exc}") from exc
        known = {f.name for f in fields(RunConfig)} - {"command"}
        unknown = set(cfg) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        merged.update(cfg)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None and val is not False:
            merged[key] = val
    if isinstance(merged["format"], str):
        merged["format"] = [merged["format"]]
    conf = RunConfig(command=args.command, **merged)
    conf.validate()
    return conf


# ---------------------------------------------------------------------------
# commands


def cmd_gallery(conf: RunConfig) -> int:
    from .weierstrass import topology

    rows = []
    for name in gallery.BUILTIN:
        top = topology(gallery.load(name))
        f = gallery.facts(name)
        rows.append({"name": name, "genus": top.genus, "ends": top.ends, "gauss_degree": top.gauss_degree,
                     "known_index": f.known_index, "embedded": f.embedded})
    report = {"schema_version": SCHEMA_VERSION, "surfaces": rows}
    out = conf.out_dir()
    if out:
        write_text(out / "gallery.json", dumps(report))
        if "csv" in conf.format:
            write_csv(out / "gallery.csv", list(rows[0]), [list(r.values()) for r in rows])
    if "json" in conf.format:
        sys.stdout.write(dumps(report))
    else:
        for r in rows:
            print(f"{r['name']:<16} g={r['genus']} r={r['ends']} d={r['gauss_degree']} index={r['known_index']}")
    return 0


def _index_report(data, conf: RunConfig) -> tuple[dict, object]:
    from .mesh import build_truncated_mesh
    from .spectral import DEFAULT_TOL, assemble_jacobi_truncated, compact_index, inertia_count, total_curvature_ratio
    from .weierstrass import topology

    tol = conf.tol or DEFAULT_TOL
    top = topology(data)
    count, res, prob = compact_index(data, conf.level, tol)
    truncated = []
    for R in conf.radii:
        mesh = build_truncated_mesh(data, R)
        n, _ = inertia_count(assemble_jacobi_truncated(mesh, data))
        truncated.append({"R": R, "negative_count": n, "vertices": mesh.num_vertices})
    counts = [t["negative_count"] for t in truncated]
    facts = gallery.facts(data.name)
    checks = {
        "unambiguous": not count.ambiguous,
        "truncated_nondecreasing": all(b >= a for a, b in zip(counts, counts[1:])),
        "truncated_bounded_by_index": all(c <= count.index for c in counts),
    }
    if facts is not None and facts.known_index is not None and not conf.gallery_file:
        checks["matches_known_index"] = count.index == facts.known_index
    report = {
        "schema_version": SCHEMA_VERSION,
        "surface": data.name,
        "level": conf.level,
        "genus": top.genus, "ends": top.ends, "gauss_degree": top.gauss_degree,
        "total_curvature_ratio": total_curvature_ratio(data, min(conf.level, 5)),
        **count.as_dict(),
        "eigenvalues": [] if res is None else list(res.eigenvalues),
        "truncated": truncated,
        "checks": checks,
        "pass": all(checks.values()),
    }
    return report, res


def cmd_index(conf: RunConfig) -> int:
    data = conf.load_surface()
    report, res = _index_report(data, conf)
    out = conf.out_dir()
    if out:
        if "json" in conf.format:
            write_text(out / "index.json", dumps(report))
        if "csv" in conf.format and res is not None:
            write_csv(out / "eigenvalues.csv", ["index", "eigenvalue", "residual"],
                      [(i, float(a), float(b)) for i, (a, b) in enumerate(zip(res.eigenvalues, res.residuals))])
        if "svg" in conf.format and res is not None:
            def draw(ax):
                ax.plot(np.arange(len(res.eigenvalues)), res.eigenvalues, "o")
                ax.axhline(2.0, color="k", lw=0.8)
                ax.axhspan(2 - report["tol"], 2 + report["tol"], color="0.85")
                ax.set_xlabel("eigenvalue number")
                ax.set_ylabel("eigenvalue")
                ax.set_title(f"{data.name}: index {report['index']}")
            write_svg(out / "spectrum.svg", draw)
    sys.stdout.write(dumps(report))
    return 0 if report["pass"] else 3


def _fit_order(h, err) -> float:
    h, err = np.asarray(h), np.asarray(err)
    ok = err > 0
    if np.sum(ok) < 2:
        return float("nan")
    return float(np.polyfit(np.log(h[ok]), np.log(err[ok]), 1)[0])


def cmd_convergence(conf: RunConfig) -> int:
    from .mesh import build_compact_mesh, build_truncated_mesh
    from .spectral import DEFAULT_TOL, assemble_gauss_metric, assemble_jacobi_truncated, gauss_spectrum, solve_lowest

    data = conf.load_surface()
    levels = list(range(3, conf.level + 1))
    if len(levels) < 3:
        raise ValidationError("a convergence study needs --level >= 5 (levels 3..level)")
    rows = []
    if data.gauss.is_constant:
        R = conf.radii[0]
        for lv in levels:
            mesh = build_truncated_mesh(data, R, base_level=lv)
            res = solve_lowest(assemble_jacobi_truncated(mesh, data), 4)
            rows.append({"level": lv, "h": res.mesh_size, "lowest": list(res.eigenvalues)})
        report = {"schema_version": SCHEMA_VERSION, "surface": data.name, "problem": "truncated-jacobi",
                  "R": R, "rows": rows,
                  "all_nonnegative": all(min(r["lowest"]) >= 0 for r in rows)}
        ok = report["all_nonnegative"]
    else:
        tol = conf.tol or DEFAULT_TOL
        for lv in levels:
            res = gauss_spectrum(assemble_gauss_metric(build_compact_mesh(data, lv), data), tol)
            lam = res.eigenvalues
            near = lam[np.argmin(np.abs(lam - 2))]
            rows.append({"level": lv, "h": res.mesh_size, "near_two": float(near), "lowest": list(lam)})
        h = [r["h"] for r in rows]
        err = [r["near_two"] - 2 for r in rows]
        drift = [abs(a["near_two"] - b["near_two"]) for a, b in zip(rows, rows[1:])]
        rec = [3 * d for d in drift]
        report = {"schema_version": SCHEMA_VERSION, "surface": data.name, "problem": "gauss-metric", "rows": rows,
                  "from_above": all(e > 0 for e in err), "fitted_order": _fit_order(h, err),
                  "level_drift": drift, "recommended_tol": rec}
        ok = report["from_above"]
    out = conf.out_dir()
    if out:
        if "json" in conf.format:
            write_text(out / "convergence.json", dumps(report))
        if "csv" in conf.format:
            write_csv(out / "convergence.csv", ["level", "h", "eigenvalues"],
                      [(r["level"], r["h"], " ".join(format(x, ".17g") for x in r["lowest"])) for r in rows])
        if "svg" in conf.format:
            def draw(ax):
                for k in range(min(len(r["lowest"]) for r in rows)):
                    ax.plot([r["h"] for r in rows], [r["lowest"][k] for r in rows], "o-", lw=0.8)
                ax.set_xscale("log")
                ax.set_xlabel("mesh size h")
                ax.set_ylabel("eigenvalue")
                ax.set_title(f"{data.name}: convergence")
            write_svg(out / "convergence.svg", draw)
    sys.stdout.write(dumps(report))
    return 0 if ok else 3


def cmd_certify(conf: RunConfig) -> int:
    from .certify import certificate

    data = conf.load_surface()
    cert = certificate(data, conf.R, conf.delta)
    g, r = data.genus, data.num_ends
    floor = max(0, math.ceil(2 * (g + r) / 3 - 1 - 1e-12))
    report = cert.as_dict()
    report["floor"] = floor
    report["pass"] = cert.sound and cert.negative_count >= floor
    out = conf.out_dir()
    if out:
        write_text(out / "certificate.json", dumps(report))
        write_text(out / "certificate_trace.txt", "\n".join(cert.trace) + "\n")
    sys.stdout.write(dumps({k: report[k] for k in ("schema_version", "surface", "truncation_radius", "negative_count",
                                                   "spectral_count", "floor", "sound", "pass")}))
    return 0 if report["pass"] else 3


def cmd_verify_theorems(conf: RunConfig) -> int:
    from .certify import case_table, theorem_checks
    from .spectral import DEFAULT_TOL, compact_index, total_curvature_ratio

    if conf.all:
        surfaces = [gallery.load(n) for n in gallery.BUILTIN]
    else:
        surfaces = [conf.load_surface()]
    reports = []
    for data in surfaces:
        count, _, _ = compact_index(data, conf.level, conf.tol or DEFAULT_TOL)
        tc = -4 * math.pi * total_curvature_ratio(data, min(conf.level, 5))
        rep = theorem_checks(data, count.index, total_curvature=tc).as_dict()
        rep["ambiguous"] = count.ambiguous
        reports.append(rep)
    cases = [v.as_dict() for v in case_table()]
    ok = all(r["all_pass"] and not r["ambiguous"] for r in reports) and all(c["excluded"] for c in cases)
    report = {"schema_version": SCHEMA_VERSION, "reports": reports, "index2_cases": cases, "pass": ok}
    out = conf.out_dir()
    if out:
        write_text(out / "theorems.json", dumps(report))
    sys.stdout.write(dumps({"schema_version": SCHEMA_VERSION, "pass": ok,
                            "surfaces": {r["surface"]: r["all_pass"] for r in reports}}))
    return 0 if ok else 3


COMMANDS = {
    "gallery": cmd_gallery,
    "index": cmd_index,
    "convergence": cmd_convergence,
    "certify": cmd_certify,
    "verify-theorems": cmd_verify_theorems,
}


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--surface", help="built-in surface name")
    common.add_argument("--gallery-file", help="JSON file with Weierstrass data")
    common.add_argument("--level", type=int, help="sphere refinement level (2-8)")
    common.add_argument("--radii", type=float, nargs="+", help="truncation radii, ascending")
    common.add_argument("--delta", type=float, help="weight exponent in (0, 1)")
    common.add_argument("--tol", type=float, help="half-width of the band around eigenvalue 2")
    common.add_argument("--R", type=float, help="cutoff radius for certificates")
    common.add_argument("--out", help="output directory")
    common.add_argument("--format", nargs="+", choices=["json", "csv", "svg"], help="output formats")
    common.add_argument("--config", help="JSON file with default settings")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="minlab", description="Morse index of genus-zero minimal surfaces.")
    parser.add_argument("--version", action="version", version=f"minlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gallery", parents=[common], help="list built-in surfaces")
    sub.add_parser("index", parents=[common], help="compute the index")
    sub.add_parser("convergence", parents=[common], help="eigenvalue convergence study")
    sub.add_parser("certify", parents=[common], help="Rayleigh-Ritz index certificate")
    vt = sub.add_parser("verify-theorems", parents=[common], help="check index inequalities")
    vt.add_argument("--all", action="store_true", help="every built-in surface")
    return parser


def _error(exc: BaseException, code: int) -> int:
    sys.stderr.write(dumps({"schema_version": SCHEMA_VERSION, "error": type(exc).__name__,
                            "message": str(exc), "exit_code": code}))
    return code


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        conf = build_config(args)
        threads = os.environ.get("MINLAB_THREADS")
        if threads:
            from threadpoolctl import threadpool_limits

            try:
                limit = int(threads)
            except ValueError as exc:
                raise ValidationError("MINLAB_THREADS must be an integer") from exc
            with threadpool_limits(limits=limit):
                return COMMANDS[conf.command](conf)
        return COMMANDS[conf.command](conf)
    except MinlabError as exc:
        return _error(exc, exc.exit_code)
    except (ValueError, TypeError) as exc:
        return _error(exc, 2)
    except Exception as exc:  # numerical library failures
        return _error(exc, 3)


if __name__ == "__main__":
    sys.exit(main())
