from __future__ import annotations

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gpbif import SIX_BRANCHES, ParameterGrid
from gpbif import io as gio
from gpbif.cli import EXIT_CONFIG, EXIT_FORMAT, EXIT_MISMATCH, EXIT_MISSING, EXIT_OK, EXIT_VERSION, main
from gpbif.problem import rotate_phase

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(0, 7), st.integers(0, 5)), elements=finite))
def test_matrix_round_trip_is_bitwise(tmp_path_factory, A):
    p = tmp_path_factory.mktemp("m") / "a.bin"
    gio.write_matrix(p, A)
    B = gio.read_matrix(p)
    assert B.shape == A.shape and B.tobytes() == np.ascontiguousarray(A).tobytes()


def test_matrix_header_layout(tmp_path):
    p = tmp_path / "a.bin"
    A = np.arange(6.0).reshape(2, 3)
    gio.write_matrix(p, A)
    raw = p.read_bytes()
    assert raw[:8] == b"GPBIFMAT"
    assert struct.unpack("<IQQ", raw[8:28]) == (1, 2, 3)
    # column-major payload
    assert np.frombuffer(raw[28:], "<f8").tolist() == [0.0, 3.0, 1.0, 4.0, 2.0, 5.0]


def test_matrix_errors(tmp_path):
    p = tmp_path / "a.bin"
    gio.write_matrix(p, np.ones((4, 4)))
    raw = p.read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-3])
    with pytest.raises(gio.TruncatedPayload):
        gio.read_matrix(tmp_path / "t.bin")
    (tmp_path / "h.bin").write_bytes(raw[:12])
    with pytest.raises(gio.TruncatedPayload):
        gio.read_matrix(tmp_path / "h.bin")
    (tmp_path / "m.bin").write_bytes(b"NOTAMAT!" + raw[8:])
    with pytest.raises(gio.MagicMismatch):
        gio.read_matrix(tmp_path / "m.bin")
    (tmp_path / "v.bin").write_bytes(raw[:8] + struct.pack("<I", 9) + raw[12:])
    with pytest.raises(gio.VersionMismatch):
        gio.read_matrix(tmp_path / "v.bin")
    (tmp_path / "x.bin").write_bytes(raw + b"\0")
    with pytest.raises(gio.FormatError):
        gio.read_matrix(tmp_path / "x.bin")


def test_diagram_csv_round_trip(coarse_run, tmp_path):
    _, grid, curves = coarse_run
    p = tmp_path / "d.csv"
    gio.write_diagram_csv(p, curves)
    lines = p.read_text().splitlines()
    assert lines[0] == "branch_m,branch_n,omega,mu,n_bosons,rho_inf,converged,newton_iters"
    assert len(lines) - 1 == len(SIX_BRANCHES) * grid.omega.size * grid.mu.size
    back = gio.read_diagram_csv(p)
    for a, b in zip(curves, back):
        assert a.label == b.label and a.records == b.records
        assert a.first_nontrivial_mu == b.first_nontrivial_mu
    (tmp_path / "bad.csv").write_text("a,b\n")
    with pytest.raises(gio.FormatError):
        gio.read_diagram_csv(tmp_path / "bad.csv")


def test_run_config_round_trip_and_overrides(tmp_path):
    cfg = gio.RunConfig(nx=16, omegas=(0.1, 0.15), labels=("0,0", "0,1v"), archive_states=False)
    back = gio.RunConfig.from_ini(cfg.to_ini())
    assert back == cfg
    env = {"GPBIF_MESH_NX": "10", "GPBIF_GRID_OMEGAS": "0.3"}
    over = gio.RunConfig.from_ini(cfg.to_ini(), env)
    assert over.nx == 10 and over.omegas == (0.3,)
    assert isinstance(cfg.grid(), ParameterGrid)
    assert [str(b) for b in cfg.branch_labels()] == ["|0,0>", "|0,1>v"]


@pytest.mark.parametrize(
    "text",
    [
        "not an ini",
        "[mesh]\nnx = ten\n",
        "[mesh]\nnx = 1\n",
        "[grid]\ndmu = 0.7\n",
        "[oops]\nx = 1\n",
        "[mesh]\ncolour = red\n",
        "[branches]\nlabels = 0;1\n",
        "[rom]\npod_tol = 2\n",
    ],
)
def test_malformed_config(text):
    with pytest.raises(gio.ConfigError):
        gio.RunConfig.from_ini(text)


def test_shipped_configs_parse():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    default = gio.RunConfig.load(root / "default.ini", env={})
    assert default.omegas == (0.2,) and default.dmu == 1.25e-3 and default.mu_max == 1.2
    assert gio.RunConfig.load(root / "desk.ini", env={}).nx == 24


def test_compare_identical_curves_is_zero(coarse_run):
    problem, _, curves = coarse_run
    rep = gio.compare_curves(curves, curves, problem, [c.states for c in curves], [c.states for c in curves])
    arr = np.array([r[4:] for r in rep.rows], dtype=float)
    assert arr.size and np.all(arr[np.isfinite(arr)] == 0.0)


def test_field_errors_ignore_global_phase(coarse_run):
    problem, _, curves = coarse_run
    x = curves[1].states[-1]
    l2, h1 = gio.field_errors(problem, x, rotate_phase(x, 0.7))
    assert l2 < 1e-10 * problem.norm(x) and h1 < 1e-10 * problem.norm(x, "H1")


def test_plot_six_curves(coarse_run, tmp_path):
    _, _, curves = coarse_run
    paths = gio.plot_diagram(curves, tmp_path / "fig")
    for p in paths:
        svg = p.read_text()
        assert svg.startswith("<svg") and svg.count("<polyline") == 6
    onsets = sorted(c.label.mu_crit(c.omega) for c in curves)
    assert onsets == pytest.approx([0.2, 0.4, 0.4, 0.6, 0.6, 0.6])


def _write_cfg(tmp_path, **kw):
    cfg = gio.RunConfig(nx=6, dmu=0.1, labels=("0,0", "0,1v"), output=str(tmp_path / "fom"), **kw)
    p = tmp_path / "run.ini"
    cfg.save(p)
    return p


def test_cli_pipeline_and_reproducibility(tmp_path):
    cfgp = _write_cfg(tmp_path)
    fom = tmp_path / "fom"
    assert main(["fom-trace", "--config", str(cfgp)]) == EXIT_OK
    first = (fom / "diagram.csv").read_bytes()
    assert main(["fom-trace", "--config", str(cfgp), "--output", str(tmp_path / "fom2")]) == EXIT_OK
    assert (tmp_path / "fom2" / "diagram.csv").read_bytes() == first
    off = tmp_path / "off"
    assert main(["offline", "--config", str(cfgp), "--fom", str(fom), "--output", str(off)]) == EXIT_OK
    for deim in ("on", "off"):
        on = tmp_path / f"on_{deim}"
        rc = main(["online-trace", "--config", str(cfgp), "--basis", str(off), "--deim", deim, "--output", str(on)])
        assert rc == EXIT_OK
        assert main(["compare", "--reference", str(fom), "--test", str(on), "--basis", str(off), "--fields"]) == EXIT_OK
        text = (on / "comparison.csv").read_text()
        assert text.startswith("branch_m,branch_n,omega,mu,E_N,E_rho,err_L2,err_H1") and "# speedup" in text
    assert main(["compare", "--reference", str(fom), "--test", str(tmp_path / "fom2")]) == EXIT_OK
    rows = [r.split(",") for r in (tmp_path / "fom2" / "comparison.csv").read_text().splitlines()[1:] if not r.startswith("#")]
    assert all(float(v) == 0.0 for r in rows for v in r[4:6])
    assert main(["plot", "--input", str(fom)]) == EXIT_OK
    assert (fom / "diagram_N.svg").exists() and (fom / "diagram_rho.svg").exists()


def test_cli_exit_codes(tmp_path):
    cfgp = _write_cfg(tmp_path)
    assert main(["online-trace", "--config", str(cfgp), "--basis", str(tmp_path / "none")]) == EXIT_MISSING
    assert main(["fom-trace", "--config", str(tmp_path / "nope.ini")]) == EXIT_MISSING
    bad = tmp_path / "bad.ini"
    bad.write_text("[mesh]\nnx = zero\n")
    assert main(["fom-trace", "--config", str(bad)]) == EXIT_CONFIG
    off = tmp_path / "off"
    off.mkdir()
    gio.write_matrix(off / "basis.bin", np.ones((5, 2)))
    assert main(["online-trace", "--config", str(cfgp), "--basis", str(off), "--deim", "off"]) == EXIT_MISMATCH
    raw = (off / "basis.bin").read_bytes()
    (off / "basis.bin").write_bytes(raw[:8] + struct.pack("<I", 2) + raw[12:])
    assert main(["online-trace", "--config", str(cfgp), "--basis", str(off), "--deim", "off"]) == EXIT_VERSION
    (off / "basis.bin").write_bytes(raw[:-4])
    assert main(["online-trace", "--config", str(cfgp), "--basis", str(off), "--deim", "off"]) == EXIT_FORMAT
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2
