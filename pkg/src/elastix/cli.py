"""Command-line driver: mesh checks, unisolvence, inf-sup and convergence studies.

Every command writes machine-readable reports into ``--out``. Reports carry no
timestamps or timings, so a repeated run with the same arguments reproduces
them byte for byte. Wall-clock times go to a separate ``timing.json``.

Exit codes: 0 pass, 1 scientific failure, 2 input error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from collections import Counter
from pathlib import Path

import numpy as np

from . import __version__
from .element import dof_functionals, expected_dof_count
from .mesh import (
    EdgeKind,
    MeshError,
    build_all_patches,
    check_assumption,
    gen_kuhn_mesh,
    load_json,
    load_msh,
    save_json,
    save_msh,
)
from .solver import (
    ComplianceTensor,
    EigensolveFailure,
    ManufacturedCase,
    SolveFailure,
    assemble,
    error_norms,
    infsup_constant,
    manufactured_case,
    solve,
)
from .space import build_space, element_poly, verify_unisolvence, write_dof_report

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2
MAX_LEVELS = 3


class InputError(Exception):
    pass


def _num(x: float, digits: int = 12) -> float:
    """Round to a fixed number of significant digits for stable reports."""
    x = float(x)
    if not math.isfinite(x) or x == 0.0:
        return x
    return float(f"{x:.{digits - 1}e}")


def _dump(path: Path, data) -> None:
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------------------
# mesh sources


def parse_mesh_source(spec: str):
    """``kuhn:<n>`` or ``file:<path>`` -> (kind, value)."""
    kind, sep, value = spec.partition(":")
    if not sep:
        raise InputError(f"mesh source {spec!r} must be kuhn:<n> or file:<path>")
    if kind == "kuhn":
        try:
            n = int(value)
        except ValueError:
            raise InputError(f"bad Kuhn size {value!r}") from None
        if n < 1:
            raise InputError("Kuhn size must be at least 1")
        return "kuhn", n
    if kind == "file":
        return "file", Path(value)
    raise InputError(f"unknown mesh source {kind!r}")


def load_mesh(source):
    kind, value = source
    if kind == "kuhn":
        return gen_kuhn_mesh(value)
    if not value.exists():
        raise InputError(f"mesh file {value} not found")
    if value.suffix == ".json":
        return load_json(value)
    return load_msh(value)


def mesh_label(source) -> str:
    kind, value = source
    return f"kuhn{value}" if kind == "kuhn" else Path(value).name


def level_sources(source, levels: int):
    if levels < 1:
        raise InputError("--levels must be at least 1")
    if levels > MAX_LEVELS:
        raise InputError(f"--levels above {MAX_LEVELS} is out of scope")
    kind, value = source
    if kind == "file":
        if levels != 1:
            raise InputError("a mesh file supports a single level only")
        return [source]
    return [("kuhn", value + j) for j in range(levels)]


# ---------------------------------------------------------------------------
# commands


def cmd_mesh_check(args, out: Path, timing: dict) -> int:
    t0 = time.perf_counter()
    mesh = load_mesh(args.source)
    patches = build_all_patches(mesh)
    counts = Counter(p.kind.value for p in patches)
    violations, singular = [], []
    for p in patches:
        verts = [int(v) for v in mesh.edges[p.edge]]
        if p.kind is EdgeKind.SINGULAR:
            singular.append(verts)
        rep = check_assumption(p, args.kappa)
        if not rep.passed:
            violations.append(
                {"edge": int(p.edge), "vertices": verts, "kind": p.kind.value,
                 "margin": _num(rep.margin), "reasons": list(rep.violations)}
            )
    report = {
        "mesh": mesh_label(args.source),
        "kappa": args.kappa,
        "n_vertices": mesh.n_vertices,
        "n_tets": mesh.n_tets,
        "n_faces": mesh.n_faces,
        "n_edges": mesh.n_edges,
        "edge_kinds": {k.value: counts.get(k.value, 0) for k in EdgeKind},
        "singular_edges": singular,
        "violations": violations,
        "pass": not violations,
    }
    _dump(out / "mesh_check.json", report)
    timing["mesh-check"] = time.perf_counter() - t0
    print(f"mesh-check {report['mesh']}: {len(violations)} violations, {len(singular)} singular edges")
    for v in violations:
        print(f"  edge {v['vertices']} ({v['kind']}): " + "; ".join(v["reasons"]))
    return EXIT_OK if report["pass"] else EXIT_FAIL


def _sampled_trace_mismatch(mesh, space, rng, n_vectors=5, n_points=10) -> float:
    normals = mesh.face_normals()
    s = rng.dirichlet(np.ones(3), size=n_points)
    worst = 0.0
    for _ in range(n_vectors):
        x = space.expand(rng.normal(size=space.dim))
        for f, owners in enumerate(mesh.face_tets):
            if len(owners) != 2:
                continue
            tr = []
            for k in owners:
                tet = mesh.tets[k].tolist()
                b = np.zeros((n_points, 4))
                for a, v in enumerate(mesh.faces[f]):
                    b[:, tet.index(int(v))] = s[:, a]
                tr.append(element_poly(x, k).evaluate(b) @ normals[f])
            worst = max(worst, float(np.abs(tr[0] - tr[1]).max()))
    return worst


def cmd_unisolvence(args, out: Path, timing: dict) -> int:
    t0 = time.perf_counter()
    mesh = load_mesh(args.source)
    patches = build_all_patches(mesh)
    space = build_space(mesh, patches)
    table = dof_functionals(mesh, patches)
    rep = verify_unisolvence(space, table)
    write_dof_report(rep, out / "dofs.json")
    mismatch = _sampled_trace_mismatch(mesh, space, np.random.default_rng(args.seed))
    data = rep.to_dict()
    data.update(
        mesh=mesh_label(args.source),
        expected_dofs=expected_dof_count(mesh, patches),
        sigma_min=_num(rep.sigma_min),
        sigma_max=_num(rep.sigma_max),
        condition=_num(rep.condition),
        seed=args.seed,
        trace_continuity_ok=mismatch <= 1e-11,
    )
    ok = rep.passed and rep.n_dofs == rep.dim and data["trace_continuity_ok"]
    data["pass"] = ok
    _dump(out / "unisolvence.json", data)
    timing["unisolvence"] = time.perf_counter() - t0
    status = "pass" if ok else "FAIL"
    print(f"unisolvence {data['mesh']}: {rep.n_dofs} DoFs, dim {rep.dim}, "
          f"sigma_min/sigma_max {rep.sigma_min / rep.sigma_max:.3e} -> {status}")
    return EXIT_OK if ok else EXIT_FAIL


def _zero_case() -> ManufacturedCase:
    def vec(x):
        return np.zeros((len(np.atleast_2d(x)), 3))

    def ten(x):
        return np.zeros((len(np.atleast_2d(x)), 3, 3))

    return ManufacturedCase(vec, ten, vec, vec)


CSV_FIELDS = [
    "mesh", "h", "dim_sigma", "dim_v",
    "err_stress_l2", "err_stress_div", "err_disp_l2",
    "rate_stress_l2", "rate_stress_div", "rate_disp_l2",
    "residual",
]


def convergence_rows(sources, lam, mu, load="manufactured", timing=None):
    """Solve on each level; returns CSV rows (dicts of raw numbers)."""
    compliance = ComplianceTensor(lam, mu)
    case = manufactured_case(lam, mu) if load == "manufactured" else _zero_case()
    rows = []
    for src in sources:
        t0 = time.perf_counter()
        mesh = load_mesh(src)
        space = build_space(mesh, build_all_patches(mesh))
        system = assemble(space, compliance, f=case.f if load == "manufactured" else None)
        sol = solve(system)
        err = error_norms(mesh, sol, case)
        rows.append({
            "mesh": mesh_label(src), "h": mesh.h, "dim_sigma": space.dim, "dim_v": system.n_disp,
            "err_stress_l2": err.stress_l2, "err_stress_div": err.stress_div, "err_disp_l2": err.disp_l2,
            "residual": sol.residual,
        })
        if timing is not None:
            timing[mesh_label(src)] = time.perf_counter() - t0
    for prev, row in zip(rows, rows[1:]):
        for key in ("stress_l2", "stress_div", "disp_l2"):
            a, b = prev["err_" + key], row["err_" + key]
            if a > 0 and b > 0:
                row["rate_" + key] = math.log(a / b) / math.log(prev["h"] / row["h"])
    return rows


def format_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        out = {}
        for k in CSV_FIELDS:
            v = r.get(k, "")
            if isinstance(v, float):
                v = f"{v:.3e}" if k == "residual" else (f"{v:.4f}" if k.startswith("rate") else f"{v:.10e}")
            out[k] = v
        w.writerow(out)
    return buf.getvalue()


def cmd_convergence(args, out: Path, timing: dict) -> int:
    sources = level_sources(args.source, args.levels)
    try:
        rows = convergence_rows(sources, *args.lame, load=args.load, timing=timing)
    except SolveFailure as exc:
        print(f"convergence: solver failure, residual {exc.residual:.3e}", file=sys.stderr)
        return EXIT_FAIL
    text = format_csv(rows)
    (out / "convergence.csv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_infsup(args, out: Path, timing: dict) -> int:
    sources = level_sources(args.source, args.levels)
    levels = []
    try:
        for src in sources:
            t0 = time.perf_counter()
            mesh = load_mesh(src)
            space = build_space(mesh, build_all_patches(mesh))
            entry = {"mesh": mesh_label(src), "h": _num(mesh.h), "beta": _num(infsup_constant(space))}
            if args.negative_control:
                entry["beta_p3_control"] = _num(infsup_constant(space, disp_degree=3))
            levels.append(entry)
            timing[mesh_label(src)] = time.perf_counter() - t0
    except EigensolveFailure as exc:
        print(f"infsup: eigensolve failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    ratios = [_num(b["beta"] / a["beta"]) for a, b in zip(levels, levels[1:])]
    ok = all(e["beta"] > 0 for e in levels) and all(r >= 0.8 for r in ratios)
    control_ok = None
    if args.negative_control:
        control_ok = all(e["beta_p3_control"] * 10 <= e["beta"] for e in levels)
    report = {"levels": levels, "ratios": ratios, "min_ratio": 0.8, "negative_control_flagged": control_ok,
              "pass": ok and control_ok is not False}
    _dump(out / "infsup.json", report)
    for e in levels:
        line = f"infsup {e['mesh']}: beta {e['beta']:.6e}"
        if "beta_p3_control" in e:
            line += f", P3 control {e['beta_p3_control']:.6e}"
        print(line)
    for r in ratios:
        print(f"  ratio {r:.4f}")
    return EXIT_OK if report["pass"] else EXIT_FAIL


def cmd_export_mesh(args, out: Path, timing: dict) -> int:
    mesh = load_mesh(args.source)
    path = out / f"mesh.{args.format}"
    (save_json if args.format == "json" else save_msh)(mesh, path)
    print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {
    "mesh-check": cmd_mesh_check,
    "unisolvence": cmd_unisolvence,
    "convergence": cmd_convergence,
    "infsup": cmd_infsup,
    "export-mesh": cmd_export_mesh,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--mesh", default="kuhn:1", help="kuhn:<n> or file:<path> (.msh or .json)")
    common.add_argument("--kappa", type=float, default=0.15, help="angle margin, in (0, pi/4)")
    common.add_argument("--lame", type=float, nargs=2, default=(1.0, 1.0), metavar=("LAMBDA", "MU"))
    common.add_argument("--levels", type=int, default=1, help="refinement levels starting at the given mesh")
    common.add_argument("--out", default=".", help="report directory")
    common.add_argument("--seed", type=int, default=0)

    p = argparse.ArgumentParser(prog="elastix", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("mesh-check", parents=[common], help="classify edges and check the angle assumption")
    sub.add_parser("unisolvence", parents=[common], help="DoF count versus dim of the stress space")
    c = sub.add_parser("convergence", parents=[common], help="manufactured-solution error table")
    c.add_argument("--load", choices=("manufactured", "zero"), default="manufactured")
    i = sub.add_parser("infsup", parents=[common], help="discrete inf-sup constants per level")
    i.add_argument("--negative-control", action="store_true", help="also pair with P3 displacements")
    e = sub.add_parser("export-mesh", parents=[common], help="write the mesh to --out")
    e.add_argument("--format", choices=("msh", "json"), default="msh")
    return p


def validate(args) -> None:
    if not 0 < args.kappa < math.pi / 4:
        raise InputError("--kappa must lie in (0, pi/4)")
    if args.seed < 0 or args.seed >= 2**64:
        raise InputError("--seed must be an unsigned 64-bit integer")
    lam, mu = args.lame
    if mu <= 0 or 3 * lam + 2 * mu <= 0:
        raise InputError("--lame must give a positive definite compliance")
    args.source = parse_mesh_source(args.mesh)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        validate(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        timing: dict = {}
        code = COMMANDS[args.command](args, out, timing)
    except (InputError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if timing:
        _dump(out / "timing.json", {k: round(v, 3) for k, v in timing.items()})
    return code


if __name__ == "__main__":
    sys.exit(main())
