"""Persistence formats, run configuration and comparison reports.

Matrix files are a fixed 28-byte header followed by the raw payload::

    magic     8 bytes   b"GPBIFMAT"
    version   u32
    rows      u64
    cols      u64
    payload   rows*cols little-endian float64, column-major

All integers are little-endian.
"""
from __future__ import annotations

import configparser
import csv
import logging
import os
import struct
from io import StringIO
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .continuation import BranchCurve, BranchRecord, ContinuationConfig, ParameterGrid
from .newton import NewtonConfig
from .problem import BranchLabel, SIX_BRANCHES

log = logging.getLogger(__name__)

MAGIC = b"GPBIFMAT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIQQ")

CSV_HEADER = ("branch_m", "branch_n", "omega", "mu", "n_bosons", "rho_inf", "converged", "newton_iters")


class FormatError(ValueError):
    """A persisted file does not have the expected layout."""


class MagicMismatch(FormatError):
    pass


class VersionMismatch(FormatError):
    pass


class TruncatedPayload(FormatError):
    pass


class ConfigError(ValueError):
    pass


# -- matrix files ---------------------------------------------------------


def write_matrix(path, A) -> None:
    A = np.asarray(A, dtype="<f8")
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise ValueError("only vectors and 2-D arrays can be stored")
    rows, cols = A.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, rows, cols))
        fh.write(np.asfortranarray(A).tobytes(order="F"))


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            if head[: len(MAGIC)] != MAGIC[: len(head)]:
                raise MagicMismatch(f"{path}: not a matrix file")
            raise TruncatedPayload(f"{path}: header is truncated")
        magic, version, rows, cols = _HEADER.unpack(head)
        if magic != MAGIC:
            raise MagicMismatch(f"{path}: bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise VersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
        nbytes = rows * cols * 8
        payload = fh.read(nbytes)
        if len(payload) != nbytes:
            raise TruncatedPayload(f"{path}: expected {nbytes} payload bytes, found {len(payload)}")
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    return np.frombuffer(payload, dtype="<f8").reshape((rows, cols), order="F").astype(float)


# -- diagram CSV ------------------------------------------------------------


def write_diagram_csv(path, curves) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for c in curves:
            for r in c.records:
                w.writerow([c.label.m, c.label.n, repr(r.omega), repr(r.mu), repr(r.n_bosons),
                            repr(r.rho_inf), int(r.converged), r.newton_iters])


def _default_label(m: int, n: int, labels) -> BranchLabel:
    for lab in labels:
        if (lab.m, lab.n) == (m, n):
            return lab
    return BranchLabel(m, n)


def read_diagram_csv(path, labels=SIX_BRANCHES) -> list[BranchCurve]:
    """Rebuild curves from a diagram CSV.

    The file keys branches by ``(m, n)`` only; the vortex/ring flag is taken
    from the first entry of ``labels`` with matching quantum numbers.
    """
    curves: dict = {}
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if tuple(header or ()) != CSV_HEADER:
            raise FormatError(f"{path}: unexpected CSV header {header}")
        for row in rd:
            if len(row) != len(CSV_HEADER):
                raise FormatError(f"{path}: malformed row {row}")
            m, n = int(row[0]), int(row[1])
            rec = BranchRecord(float(row[3]), float(row[2]), float(row[4]), float(row[5]), int(row[7]), row[6] == "1")
            key = (m, n, rec.omega)
            if key not in curves:
                curves[key] = BranchCurve(_default_label(m, n, labels), rec.omega)
            cur = curves[key]
            cur.records.append(rec)
            if cur.first_nontrivial_mu is None and rec.converged and rec.n_bosons > 0:
                cur.first_nontrivial_mu = rec.mu
    return list(curves.values())


def write_timings(path, timings: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("phase", "seconds"))
        for k, v in timings.items():
            w.writerow((k, repr(float(v))))


def read_timings(path) -> dict:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        next(rd, None)
        return {k: float(v) for k, v in rd}


# -- run configuration ----------------------------------------------------


def _floats(text: str) -> tuple:
    return tuple(float(s) for s in text.replace(",", " ").replace(";", " ").split())


@dataclass
class RunConfig:
    """Everything needed to reproduce a run; stored as a sectioned INI file."""

    L: float = 12.0
    nx: int = 48
    degree: int = 2
    omegas: tuple = (0.2,)
    mu_min: float = 0.0
    mu_max: float = 1.2
    dmu: float = 1.25e-3
    labels: tuple = tuple(str(b) for b in SIX_BRANCHES)
    guess_rule: str = "linear-limit"
    guess_amplitude: float = 1.0
    guess_floor: float = 1e-3
    newton_tol: float = 1e-10
    newton_max_iter: int = 25
    newton_criterion: str = "residual"
    damping: float = 1.0
    eps_bif: float = 1e-4
    norm: str = "L2"
    pod_tol: float = 1e-9
    pod_n_max: int = 200
    pod_ip: str = "H1"
    n_train: int = 40
    deim_tol: float = 1e-14
    deim_q: int = 0  # 0: choose Q from deim_tol
    mode: str = "fom"
    output: str = "out"
    seed: int = 0
    threads: int = 1
    archive_states: bool = True

    _SECTIONS = {
        "mesh": ("L", "nx", "degree"),
        "grid": ("omegas", "mu_min", "mu_max", "dmu"),
        "branches": ("labels", "guess_rule", "guess_amplitude", "guess_floor"),
        "newton": ("newton_tol", "newton_max_iter", "newton_criterion", "damping"),
        "continuation": ("eps_bif", "norm"),
        "rom": ("pod_tol", "pod_n_max", "pod_ip", "n_train"),
        "deim": ("deim_tol", "deim_q"),
        "run": ("mode", "output", "seed", "threads", "archive_states"),
    }

    def __post_init__(self):
        self.validate()

    def validate(self):
        try:
            self.grid()
            self.continuation()
            self.branch_labels()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.L <= 0 or self.nx < 2 or self.degree not in (1, 2):
            raise ConfigError("mesh needs L > 0, nx >= 2 and degree 1 or 2")
        if not 0 < self.pod_tol < 1 or not 0 < self.deim_tol < 1:
            raise ConfigError("POD and DEIM tolerances must lie in (0, 1)")
        if self.pod_ip not in ("L2", "H1"):
            raise ConfigError(f"unknown inner product {self.pod_ip!r}")
        if self.pod_n_max < 1 or self.n_train < 1 or self.deim_q < 0 or self.threads < 1:
            raise ConfigError("counts must be positive")
        if self.mode not in ("fom", "offline", "online"):
            raise ConfigError(f"unknown mode {self.mode!r}")

    def grid(self) -> ParameterGrid:
        return ParameterGrid.uniform(self.mu_min, self.mu_max, self.dmu, self.omegas)

    def continuation(self) -> ContinuationConfig:
        newton = NewtonConfig(self.newton_tol, self.newton_max_iter, self.damping, self.newton_criterion)
        return ContinuationConfig(
            eps_bif=self.eps_bif,
            guess_amplitude=self.guess_amplitude,
            newton=newton,
            norm_kind=self.norm,
            guess_rule=self.guess_rule,
            guess_floor=self.guess_floor,
        )

    def branch_labels(self) -> list[BranchLabel]:
        return [BranchLabel.parse(s) for s in self.labels]

    # serialization

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        for sec, keys in self._SECTIONS.items():
            cp[sec] = {k: self._format(getattr(self, k)) for k in keys}
        buf = StringIO()
        cp.write(buf)
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.to_ini())

    @staticmethod
    def _format(v) -> str:
        if isinstance(v, bool):
            return "yes" if v else "no"
        if isinstance(v, tuple):
            return "; ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        if isinstance(v, float):
            return repr(v)
        return str(v)

    @classmethod
    def from_ini(cls, text: str, env: dict | None = None) -> "RunConfig":
        """Parse INI text; ``GPBIF_<SECTION>_<KEY>`` entries of ``env`` override it."""
        cp = configparser.ConfigParser()
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for sec in cp.sections():
            if sec not in cls._SECTIONS:
                raise ConfigError(f"unknown config section [{sec}]")
            for k in cp[sec]:
                if k not in cls._SECTIONS[sec]:
                    raise ConfigError(f"unknown key {k!r} in [{sec}]")
        for sec, keys in cls._SECTIONS.items():
            for k in keys:
                raw = None
                if cp.has_option(sec, k):
                    raw = cp.get(sec, k)
                if env:
                    raw = env.get(f"GPBIF_{sec.upper()}_{k.upper()}", raw)
                if raw is not None:
                    kwargs[k] = cls._parse(k, raw, types[k], cp)
        try:
            return cls(**kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @staticmethod
    def _parse(key, raw: str, typ: str, cp):
        raw = raw.strip()
        try:
            if key == "omegas":
                return _floats(raw)
            if key == "labels":
                return tuple(s.strip() for s in raw.split(";") if s.strip())
            if typ == "bool":
                return cp.BOOLEAN_STATES[raw.lower()]
            if typ == "int":
                return int(raw)
            if typ == "float":
                return float(raw)
            return raw
        except (KeyError, ValueError):
            raise ConfigError(f"bad value for {key}: {raw!r}") from None

    @classmethod
    def load(cls, path, env: dict | None = None) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise FileNotFoundError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_ini(text, os.environ if env is None else env)


# -- comparison -------------------------------------------------------------


@dataclass
class ComparisonReport:
    """Per-branch, per-mu errors between a reference and a test diagram."""

    rows: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    HEADER = ("branch_m", "branch_n", "omega", "mu", "E_N", "E_rho", "err_L2", "err_H1")

    def add(self, label, omega, mu, e_n, e_rho, l2=np.nan, h1=np.nan):
        self.rows.append((label.m, label.n, omega, mu, e_n, e_rho, l2, h1))

    def max_error(self, column: str = "E_N", label: BranchLabel | None = None) -> float:
        j = self.HEADER.index(column)
        vals = [r[j] for r in self.rows if label is None or (r[0], r[1]) == (label.m, label.n)]
        vals = [v for v in vals if np.isfinite(v)]
        return max(vals) if vals else np.nan

    def argmax_mu(self, column: str, label: BranchLabel) -> float:
        j = self.HEADER.index(column)
        sel = [r for r in self.rows if (r[0], r[1]) == (label.m, label.n) and np.isfinite(r[j])]
        return max(sel, key=lambda r: r[j])[3] if sel else np.nan

    def speedup(self, ref: str = "fom", test: str | None = None) -> float:
        """Wall-time ratio; ``test`` defaults to the first ``online*`` phase."""
        if test is None:
            test = next((k for k in self.timings if k.startswith("online")), None)
        if ref in self.timings and test in self.timings and self.timings[test] > 0:
            return self.timings[ref] / self.timings[test]
        return np.nan

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.HEADER)
            for r in self.rows:
                w.writerow([r[0], r[1]] + [repr(float(v)) for v in r[2:]])
            for k, v in self.timings.items():
                w.writerow([f"# time_{k}", repr(float(v))])
            s = self.speedup()
            if np.isfinite(s):
                w.writerow(["# speedup", repr(float(s))])


def compare_curves(reference, test, problem=None, ref_states=None, test_states=None, timings=None) -> ComparisonReport:
    """``E_N = |N_h - N_N|`` and ``E_rho = | |rho_h|_inf - |rho_N|_inf |`` on matching grid points.

    Curves are matched by ``(m, n, omega)`` and points by ``mu``.  When
    ``problem`` and both state lists (free-layout FE vectors aligned with
    ``records``) are given, the L2 and H1 field errors are added; they are
    computed up to a global phase of the test state.
    """
    rep = ComparisonReport(timings=dict(timings or {}))
    index = {(c.label.m, c.label.n, c.omega): i for i, c in enumerate(test)}
    for i, c in enumerate(reference):
        j = index.get((c.label.m, c.label.n, c.omega))
        if j is None:
            continue
        t = test[j]
        tmu = {round(r.mu, 12): k for k, r in enumerate(t.records)}
        for k, r in enumerate(c.records):
            kk = tmu.get(round(r.mu, 12))
            if kk is None:
                continue
            s = t.records[kk]
            l2 = h1 = np.nan
            if problem is not None and ref_states is not None and test_states is not None:
                xa, xb = ref_states[i][k], test_states[j][kk]
                if xa is not None and xb is not None:
                    l2, h1 = field_errors(problem, xa, xb)
            rep.add(c.label, r.omega, r.mu, abs(r.n_bosons - s.n_bosons), abs(r.rho_inf - s.rho_inf), l2, h1)
    return rep


def field_errors(problem, xa: np.ndarray, xb: np.ndarray) -> tuple[float, float]:
    """L2 and H1 norms of ``xa - xb``, minimized over a global phase of ``xb``."""
    from .problem import rotate_phase

    h = xa.shape[0] // 2
    # optimal phase for the L2 error: maximize <xa, R(theta) xb>_M
    M = problem.M
    Mb = M @ xb
    jb = np.concatenate([-xb[h:], xb[:h]])
    theta = np.arctan2(xa @ (M @ jb), xa @ Mb)
    out = []
    for d in (xa - xb, xa - rotate_phase(xb, theta)):
        out.append((problem.norm(d, "L2"), problem.norm(d, "H1")))
    return min(out)


# -- SVG plots ---------------------------------------------------------------

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def svg_line_chart(series, title: str = "", xlabel: str = "", ylabel: str = "", width: int = 640, height: int = 420) -> str:
    """Minimal SVG line chart; ``series`` is a list of ``(name, x, y)``."""
    ml, mr, mt, mb = 64, 150, 32, 48
    pw, ph = width - ml - mr, height - mt - mb
    xs = np.concatenate([np.asarray(s[1], float) for s in series]) if series else np.zeros(1)
    ys = np.concatenate([np.asarray(s[2], float) for s in series]) if series else np.zeros(1)
    ok = np.isfinite(xs) & np.isfinite(ys)
    x0, x1 = (xs[ok].min(), xs[ok].max()) if ok.any() else (0.0, 1.0)
    y0, y1 = (min(0.0, ys[ok].min()), ys[ok].max()) if ok.any() else (0.0, 1.0)
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0
    sx = lambda v: ml + (v - x0) / (x1 - x0) * pw
    sy = lambda v: mt + ph - (v - y0) / (y1 - y0) * ph
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>',
        f'<text x="{ml + pw / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{ml + pw / 2}" y="{height - 10}" text-anchor="middle">{xlabel}</text>',
        f'<text x="16" y="{mt + ph / 2}" text-anchor="middle" transform="rotate(-90 16 {mt + ph / 2})">{ylabel}</text>',
    ]
    for t in np.linspace(x0, x1, 5):
        out.append(f'<text x="{sx(t):.1f}" y="{mt + ph + 16}" text-anchor="middle">{t:.3g}</text>')
    for t in np.linspace(y0, y1, 5):
        out.append(f'<text x="{ml - 6}" y="{sy(t) + 4:.1f}" text-anchor="end">{t:.3g}</text>')
    for k, (name, x, y) in enumerate(series):
        col = _COLORS[k % len(_COLORS)]
        x, y = np.asarray(x, float), np.asarray(y, float)
        good = np.isfinite(x) & np.isfinite(y)
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x[good], y[good]))
        out.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{pts}"><title>{name}</title></polyline>')
        ly = mt + 14 + 18 * k
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly}" x2="{ml + pw + 30}" y2="{ly}" stroke="{col}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 36}" y="{ly + 4}">{_escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def plot_diagram(curves, path_prefix) -> list[Path]:
    """Write ``<prefix>_N.svg`` and ``<prefix>_rho.svg``; returns the paths."""
    paths = []
    for what, ylabel in (("n_bosons", "N"), ("rho_inf", "max |phi|^2")):
        series = [(f"{c.label} W={c.omega:g}", c.mu, getattr(c, what)) for c in curves]
        p = Path(f"{path_prefix}_{'N' if what == 'n_bosons' else 'rho'}.svg")
        p.write_text(svg_line_chart(series, title=f"{ylabel} vs mu", xlabel="mu", ylabel=ylabel))
        paths.append(p)
    return paths
