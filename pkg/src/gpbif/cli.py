"""Command line driver: ``gpbif <fom-trace|offline|online-trace|compare|plot>``.

Every run directory holds a copy of the configuration (``config.ini``) so
later stages can rebuild the same mesh.  Layout::

    fom run      config.ini diagram.csv states.bin timings.csv
    offline      config.ini snapshots.bin snapshot_tags.csv basis.bin
                 pod_eigenvalues.bin deim_basis.bin deim_magic.bin timings.csv
    online run   config.ini diagram.csv coefficients.bin timings.csv
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io as gio
from .continuation import FullOrderBackend, trace_diagram
from .deim import DeimModel, deim_build, nonlinear_snapshots
from .fem import build_mesh
from .problem import BranchLabel, GpProblem
from .rom import ReducedBackend, ReducedBasis, SnapshotSet, pod

log = logging.getLogger("gpbif")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_FORMAT = 5
EXIT_VERSION = 6
EXIT_MISMATCH = 7


class MissingArtifact(FileNotFoundError):
    pass


class ArtifactMismatch(ValueError):
    pass


def _load_config(args) -> gio.RunConfig:
    cfg = gio.RunConfig.load(args.config)
    if getattr(args, "threads", None):
        cfg.threads = args.threads
    if getattr(args, "output", None):
        cfg.output = args.output
    cfg.validate()
    return cfg


def _problem(cfg: gio.RunConfig) -> GpProblem:
    _, space = build_mesh(cfg.L, cfg.nx, cfg.degree)
    return GpProblem(space)


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingArtifact(f"missing artifact {path}")
    return path


def _stack_states(curves, n: int) -> np.ndarray:
    cols = []
    for c in curves:
        for rec, x in zip(c.records, c.states):
            if x is None:
                cols.append(np.full(n, np.nan))
            elif rec.n_bosons == 0.0:
                cols.append(np.zeros(n))
            else:
                cols.append(np.asarray(x, dtype=float))
    return np.column_stack(cols) if cols else np.zeros((n, 0))


def _attach_states(curves, mat: np.ndarray):
    k = 0
    out = []
    for c in curves:
        cols = []
        for _ in c.records:
            x = mat[:, k]
            cols.append(None if np.isnan(x).any() else x)
            k += 1
        out.append(cols)
    if k != mat.shape[1]:
        raise ArtifactMismatch(f"state archive has {mat.shape[1]} columns, diagram has {k} rows")
    return out


def _trace(cfg: gio.RunConfig, backend, keep_states: bool):
    t0 = time.perf_counter()
    curves = trace_diagram(cfg.branch_labels(), cfg.grid(), backend, cfg.continuation(),
                           keep_states=keep_states, workers=cfg.threads)
    return curves, time.perf_counter() - t0


def cmd_fom_trace(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    problem = _problem(cfg)
    curves, elapsed = _trace(cfg, FullOrderBackend(problem), keep_states=cfg.archive_states)
    cfg.save(out / "config.ini")
    gio.write_diagram_csv(out / "diagram.csv", curves)
    if cfg.archive_states:
        gio.write_matrix(out / "states.bin", _stack_states(curves, problem.n))
    gio.write_timings(out / "timings.csv", {"fom": elapsed})
    _summary(curves)
    log.info("FOM trace: %.2f s, written to %s", elapsed, out)
    return EXIT_OK


def _fom_curves_with_states(run: Path, cfg: gio.RunConfig, problem: GpProblem):
    curves = gio.read_diagram_csv(_require(run / "diagram.csv"), cfg.branch_labels())
    mat = gio.read_matrix(_require(run / "states.bin"))
    if mat.shape[0] != problem.n:
        raise ArtifactMismatch(f"{run}/states.bin has rows of length {mat.shape[0]}, mesh needs {problem.n}")
    for c, states in zip(curves, _attach_states(curves, mat)):
        c.states = states
    return curves


def cmd_offline(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    problem = _problem(cfg)
    timings = {}
    if args.fom:
        curves = _fom_curves_with_states(Path(args.fom), cfg, problem)
    else:
        curves, timings["fom"] = _trace(cfg, FullOrderBackend(problem), keep_states=True)
    t0 = time.perf_counter()
    snaps = SnapshotSet.from_curves(curves, n_train=cfg.n_train)
    basis = pod(snaps, problem, ip=cfg.pod_ip, tol=cfg.pod_tol, n_max=cfg.pod_n_max)
    timings["pod"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    nl = nonlinear_snapshots(snaps, problem, basis)
    model = deim_build(nl, basis, q=cfg.deim_q or None, tol=cfg.deim_tol)
    timings["deim"] = time.perf_counter() - t0
    cfg.save(out / "config.ini")
    gio.write_matrix(out / "snapshots.bin", snaps.matrix)
    with open(out / "snapshot_tags.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("branch", "mu", "omega"))
        for lab, mu, om in snaps.tags:
            w.writerow((str(lab), repr(mu), repr(om)))
    gio.write_matrix(out / "basis.bin", basis.V)
    gio.write_matrix(out / "pod_eigenvalues.bin", basis.eigenvalues)
    gio.write_matrix(out / "deim_basis.bin", model.U)
    gio.write_matrix(out / "deim_magic.bin", model.magic_indices.astype(float))
    gio.write_timings(out / "timings.csv", timings)
    print(f"snapshots {snaps.count}  N = {basis.N}  Q = {model.Q}  sample elements = {model.sample_elements.size}")
    return EXIT_OK


def load_offline(path: Path, problem: GpProblem, ip: str, with_deim: bool):
    V = gio.read_matrix(_require(path / "basis.bin"))
    if V.shape[0] != problem.n:
        raise ArtifactMismatch(f"basis rows {V.shape[0]} do not match the mesh ({problem.n} free dofs)")
    eig_path = path / "pod_eigenvalues.bin"
    eig = gio.read_matrix(eig_path).ravel() if eig_path.exists() else None
    basis = ReducedBasis.from_matrix(problem, V, ip=ip, eigenvalues=eig)
    model = None
    if with_deim:
        U = gio.read_matrix(_require(path / "deim_basis.bin"))
        magic = gio.read_matrix(_require(path / "deim_magic.bin")).ravel().astype(np.int64)
        model = DeimModel(U, magic, basis)
    return basis, model


def cmd_online_trace(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    problem = _problem(cfg)
    basis, model = load_offline(Path(args.basis), problem, cfg.pod_ip, args.deim == "on")
    backend = ReducedBackend(basis, model)
    curves, elapsed = _trace(cfg, backend, keep_states=True)
    cfg.save(out / "config.ini")
    gio.write_diagram_csv(out / "diagram.csv", curves)
    coeffs = _stack_states(curves, basis.N)
    gio.write_matrix(out / "coefficients.bin", coeffs)
    key = "online_deim" if model is not None else "online"
    gio.write_timings(out / "timings.csv", {key: elapsed})
    _summary(curves)
    log.info("online trace (%s): %.2f s", key, elapsed)
    return EXIT_OK


def cmd_compare(args) -> int:
    ref, test = Path(args.reference), Path(args.test)
    ref_cfg = gio.RunConfig.load(_require(ref / "config.ini"), env={})
    labels = ref_cfg.branch_labels()
    rc = gio.read_diagram_csv(_require(ref / "diagram.csv"), labels)
    tc = gio.read_diagram_csv(_require(test / "diagram.csv"), labels)
    timings = {}
    for d in (ref, test):
        if (d / "timings.csv").exists():
            timings.update(gio.read_timings(d / "timings.csv"))
    problem = ref_states = test_states = None
    if args.fields and (ref / "states.bin").exists():
        problem = _problem(ref_cfg)
        ref_states = _attach_states(rc, gio.read_matrix(ref / "states.bin"))
        if (test / "states.bin").exists():
            test_states = _attach_states(tc, gio.read_matrix(test / "states.bin"))
        elif (test / "coefficients.bin").exists():
            if not args.basis:
                raise MissingArtifact("field errors of a reduced run need --basis")
            basis, _ = load_offline(Path(args.basis), problem, ref_cfg.pod_ip, False)
            coeffs = _attach_states(tc, gio.read_matrix(test / "coefficients.bin"))
            test_states = [[None if x is None else basis.lift(x) for x in cs] for cs in coeffs]
    rep = gio.compare_curves(rc, tc, problem, ref_states, test_states, timings)
    out = Path(args.output) if args.output else test / "comparison.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    rep.write_csv(out)
    for c in rc:
        print(f"{str(c.label):8s} W={c.omega:g}  max E_N = {rep.max_error('E_N', c.label):.3e}"
              f"  max E_rho = {rep.max_error('E_rho', c.label):.3e}")
    online = [k for k in timings if k.startswith("online")]
    if "fom" in timings and online:
        print(f"speedup {timings['fom'] / timings[online[0]]:.2f}x ({online[0]})")
    return EXIT_OK


def cmd_plot(args) -> int:
    src = Path(args.input)
    cfg_path = src / "config.ini"
    labels = gio.RunConfig.load(cfg_path, env={}).branch_labels() if cfg_path.exists() else None
    curves = gio.read_diagram_csv(_require(src / "diagram.csv"), *(labels,) if labels else ())
    out = Path(args.output) if args.output else src
    out.mkdir(parents=True, exist_ok=True)
    for p in gio.plot_diagram(curves, out / "diagram"):
        print(p)
    return EXIT_OK


def _summary(curves):
    for c in curves:
        bad = int((~c.converged).sum())
        print(f"{str(c.label):8s} W={c.omega:g}  first nontrivial mu = {c.first_nontrivial_mu}"
              f"  failed points = {bad}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gpbif", description="GP bifurcation diagrams: FOM, POD-ROM and DEIM.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="INI run configuration")
            sp.add_argument("--threads", type=int, default=None, help="concurrent branch traces")
        sp.add_argument("--output", default=None, help="output directory (or file for compare)")

    sp = sub.add_parser("fom-trace", help="trace branches with the finite element solver")
    common(sp)
    sp.set_defaults(func=cmd_fom_trace)

    sp = sub.add_parser("offline", help="snapshots, POD basis and DEIM model")
    common(sp)
    sp.add_argument("--fom", default=None, help="reuse the states of an existing fom-trace run")
    sp.set_defaults(func=cmd_offline)

    sp = sub.add_parser("online-trace", help="trace branches with the reduced model")
    common(sp)
    sp.add_argument("--basis", required=True, help="offline output directory")
    sp.add_argument("--deim", choices=("on", "off"), default="on")
    sp.set_defaults(func=cmd_online_trace)

    sp = sub.add_parser("compare", help="E_N, E_rho and field errors between two runs")
    sp.add_argument("--reference", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--basis", default=None, help="offline directory, to lift reduced states")
    sp.add_argument("--fields", action="store_true", help="also compute L2/H1 field errors")
    common(sp, config=False)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("plot", help="SVG charts of N and max density against mu")
    sp.add_argument("--input", required=True, help="run directory with diagram.csv")
    common(sp, config=False)
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except gio.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except gio.VersionMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERSION
    except gio.FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ArtifactMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH


if __name__ == "__main__":
    sys.exit(main())
