"""Scenario files: schema-validated TOML describing grid, weights, data, and
query defaults, with a fixed catalog of closed-form expressions and CSV grids.

The writer emits a canonical form (sorted keys) so parse -> serialize -> parse
round-trips exactly.
"""

from __future__ import annotations

import hashlib
import io
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ScenarioError
from .grid import BallFamily, GridDomain
from .solver import Scenario
from .weights import ProblemWeights, WeightField

SCHEMA_VERSION = 1

_TOP_KEYS = {"schema_version", "name", "grid", "mu", "lambda", "data",
             "solver", "audit", "queries"}
_GRID_KEYS = {"dim", "origin", "extent", "shape", "time_steps", "t_final"}
_DATA_KEYS = {"dirichlet", "plus", "minus", "source", "exact"}
_SOLVER_KEYS = {"zero_tol", "data_placement", "residual_tol"}
_AUDIT_KEYS = {"q", "subset_samples", "seed", "ball_centers", "radii",
               "eps_list", "doubling_qmax", "doubling_centers", "doubling_radii", "delta_grid"}
_QUERY_KEYS = {"point", "t", "rho", "theta_ladder", "holder_radii", "beta",
               "h_level_frac", "case", "omega"}


# ----------------------------------------------------------------------
# expression catalog
# ----------------------------------------------------------------------

def _pts(points):
    p = np.atleast_2d(np.asarray(points, dtype=float))
    return p


def make_expression(cfg, base_dir=None):
    """Compile one catalog entry into f(points, t=None) -> values."""
    if isinstance(cfg, (int, float)):
        cfg = {"kind": "const", "value": float(cfg)}
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise ScenarioError(f"expression needs a 'kind': {cfg!r}")
    kind = cfg["kind"]
    unknown = set(cfg) - {"kind"} - _EXPR_PARAMS.get(kind, set())
    if kind not in _EXPR_PARAMS:
        raise ScenarioError(f"unknown expression kind {kind!r}")
    if unknown:
        raise ScenarioError(f"unknown keys {sorted(unknown)} for {kind!r}")

    if kind == "const":
        v = float(cfg.get("value", 0.0))
        return lambda points, t=None: np.full(len(_pts(points)), v)
    if kind == "power":
        beta = float(cfg["beta"])
        center = np.asarray(cfg.get("center", [0.0]), dtype=float)
        def f(points, t=None):
            p = _pts(points)
            r = np.sqrt(np.sum((p - center[None, : p.shape[1]]) ** 2, axis=1))
            return r**beta
        return f
    if kind == "sgn_x":
        return lambda points, t=None: np.sign(_pts(points)[:, 0])
    if kind == "sgn_xy":
        def f(points, t=None):
            p = _pts(points)
            return np.sign(p[:, 0] * p[:, 1])
        return f
    if kind == "half_plane":
        thr = float(cfg.get("threshold", 0.0))
        lo = float(cfg.get("low", 0.0))
        hi = float(cfg.get("high", 1.0))
        return lambda points, t=None: np.where(_pts(points)[:, 0] < thr, hi, lo)
    if kind == "cusp":
        n = cfg.get("n", 3)
        L = float(cfg.get("length", 1.0))
        inside = float(cfg.get("inside", 1.0))
        outside = float(cfg.get("outside", -1.0))
        def f(points, t=None):
            p = _pts(points)
            x, y = p[:, 0], p[:, 1]
            if n == "exp":
                width = np.where(x > 0, np.exp(-1.0 / np.maximum(x, 1e-300)), 0.0)
            else:
                width = np.where(x > 0, x ** float(n), 0.0)
            inb = (x > 0) & (x < L) & (np.abs(y) < width)
            return np.where(inb, inside, outside)
        return f
    if kind == "osc_interface":
        def f(points, t=None):
            p = _pts(points)
            x, y = p[:, 0], p[:, 1]
            fx = np.where(np.abs(x) > 1e-300, x * np.cos(1.0 / np.where(x == 0, 1.0, x)), 0.0)
            return np.sign(y - fx)
        return f
    if kind == "piecewise":
        boxes = cfg["boxes"]; values = cfg["values"]
        default = float(cfg.get("default", 0.0))
        def f(points, t=None):
            p = _pts(points)
            out = np.full(len(p), default)
            for box, v in zip(boxes, values):
                lo = np.asarray(box[0], dtype=float)
                hi = np.asarray(box[1], dtype=float)
                m = np.all((p >= lo) & (p <= hi), axis=1)
                out[m] = float(v)
            return out
        return f
    if kind == "csv":
        path = Path(cfg["path"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        vals = _read_csv_grid(path)
        def f(points, t=None):
            p = _pts(points)
            if len(p) != vals.size:
                raise ScenarioError("csv grid does not match the scenario grid")
            return vals.copy()
        return f
    if kind == "sin_pi_x":
        amp = float(cfg.get("amplitude", 1.0))
        return lambda points, t=None: amp * np.sin(np.pi * _pts(points)[:, 0])
    if kind == "gauss":
        center = np.asarray(cfg.get("center", [0.5]), dtype=float)
        sigma = float(cfg.get("sigma", 0.05))
        amp = float(cfg.get("amplitude", 1.0))
        off = float(cfg.get("offset", 0.0))
        def f(points, t=None):
            p = _pts(points)
            d2 = np.sum((p - center[None, : p.shape[1]]) ** 2, axis=1)
            return off + amp * np.exp(-d2 / (2 * sigma**2))
        return f
    if kind == "affine":
        a0 = float(cfg.get("a0", 0.0))
        ax = float(cfg.get("ax", 0.0))
        ay = float(cfg.get("ay", 0.0))
        def f(points, t=None):
            p = _pts(points)
            out = a0 + ax * p[:, 0]
            if p.shape[1] > 1:
                out = out + ay * p[:, 1]
            return out
        return f
    if kind == "affine_gauss":
        aff = make_expression({"kind": "affine", **{k: cfg[k] for k in ("a0", "ax", "ay") if k in cfg}})
        g = make_expression({"kind": "gauss", **{k: cfg[k] for k in ("center", "sigma", "amplitude") if k in cfg}})
        return lambda points, t=None: aff(points) + g(points)
    if kind == "step_t":
        before = make_expression(cfg.get("before", 0.0))
        after = make_expression(cfg.get("after", 0.0))
        ts = float(cfg["t_switch"])
        def f(points, t=None):
            tt = 0.0 if t is None else float(t)
            return before(points) if tt < ts else after(points)
        return f
    raise ScenarioError(f"unhandled expression kind {kind!r}")


_EXPR_PARAMS = {
    "const": {"value"},
    "power": {"beta", "center"},
    "sgn_x": set(),
    "sgn_xy": set(),
    "half_plane": {"threshold", "low", "high"},
    "cusp": {"n", "length", "inside", "outside"},
    "osc_interface": set(),
    "piecewise": {"boxes", "values", "default"},
    "csv": {"path"},
    "sin_pi_x": {"amplitude"},
    "gauss": {"center", "sigma", "amplitude", "offset"},
    "affine": {"a0", "ax", "ay"},
    "affine_gauss": {"a0", "ax", "ay", "center", "sigma", "amplitude"},
    "step_t": {"before", "after", "t_switch"},
}


def _read_csv_grid(path):
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    dims = [int(v) for v in lines[0].split(",")]
    vals = []
    for ln in lines[1:]:
        vals.extend(float(v) for v in ln.split(","))
    n = int(np.prod(dims))
    if len(vals) != n:
        raise ScenarioError(f"csv grid {path}: expected {n} values, got {len(vals)}")
    return np.asarray(vals)


# ----------------------------------------------------------------------
# loading and validation
# ----------------------------------------------------------------------

@dataclass
class LoadedScenario:
    name: str
    raw: dict
    grid: GridDomain
    mu: WeightField
    lam: WeightField
    scenario: Scenario = None      # None for audit-only scenarios without data
    audit: dict = field(default_factory=dict)
    queries: dict = field(default_factory=dict)
    exact: str = None
    path: str = None

    def weights(self, zero_tol=None):
        zt = self.audit.get("zero_tol", 0.0) if zero_tol is None else zero_tol
        if self.scenario is not None:
            zt = self.scenario.zero_tol
        return ProblemWeights.from_mu_lambda(self.mu, self.lam, zero_tol=zt)

    def ball_family(self):
        centers = self.audit.get("ball_centers")
        radii = self.audit.get("radii")
        if not centers or not radii:
            raise ScenarioError("scenario lacks [audit] ball_centers/radii")
        return BallFamily(centers=centers, radii=radii)

    def doubling_family(self):
        centers = self.audit.get("doubling_centers") or self.audit.get("ball_centers")
        radii = self.audit.get("doubling_radii") or self.audit.get("radii")
        return BallFamily(centers=centers, radii=radii) if len(radii) >= 2 else \
            BallFamily(centers=centers, radii=[radii[0], 2 * radii[0]])

    def config_hash(self):
        return hashlib.sha256(dump_toml(self.raw).encode()).hexdigest()[:16]


def _check_keys(table, allowed, where):
    unknown = set(table) - allowed
    if unknown:
        raise ScenarioError(f"unknown keys {sorted(unknown)} in [{where}]")


def load_scenario(path_or_text, base_dir=None) -> LoadedScenario:
    if isinstance(path_or_text, (str, Path)) and "\n" not in str(path_or_text):
        path = Path(path_or_text)
        raw = tomllib.loads(path.read_text())
        base_dir = base_dir or path.parent
        src_path = str(path)
    else:
        raw = tomllib.loads(str(path_or_text))
        src_path = None
    _check_keys(raw, _TOP_KEYS, "scenario")
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ScenarioError(f"schema_version must be {SCHEMA_VERSION}")
    gt = raw.get("grid") or {}
    _check_keys(gt, _GRID_KEYS, "grid")
    dim = int(gt["dim"])
    time_steps = int(gt.get("time_steps", 1))
    t_final = float(gt.get("t_final", 1.0))
    grid = GridDomain(dim=dim,
                      origin=tuple(float(v) for v in gt["origin"]),
                      extent=tuple(float(v) for v in gt["extent"]),
                      shape=tuple(int(v) for v in gt["shape"]),
                      time_steps=time_steps, dt=t_final / time_steps)
    cent = grid.centers()
    mu_f = make_expression(raw.get("mu", {"kind": "const", "value": 1.0}), base_dir)
    lam_f = make_expression(raw.get("lambda", {"kind": "const", "value": 1.0}), base_dir)
    mu = WeightField(grid, mu_f(cent), kind="mu")
    lam = WeightField(grid, lam_f(cent), kind="lambda")

    st = raw.get("solver") or {}
    _check_keys(st, _SOLVER_KEYS, "solver")
    data = raw.get("data")
    scenario = None
    exact = None
    if data is not None:
        _check_keys(data, _DATA_KEYS, "data")
        zero_tol = float(st.get("zero_tol", 0.0))
        labels_plus = mu.values > zero_tol
        labels_minus = mu.values < -zero_tol
        dirichlet_f = make_expression(data.get("dirichlet", 0.0), base_dir)
        dp = dm = None
        if labels_plus.any():
            if "plus" not in data:
                raise ScenarioError("data.plus required where mu > 0")
            dp = make_expression(data["plus"], base_dir)(cent)
        if labels_minus.any():
            if "minus" not in data:
                raise ScenarioError("data.minus required where mu < 0")
            dm = make_expression(data["minus"], base_dir)(cent)
        source = np.zeros((grid.ncells, grid.n_levels))
        if "source" in data:
            sf = make_expression(data["source"], base_dir)
            for n, t in enumerate(grid.times()):
                source[:, n] = sf(cent, t)
        scenario = Scenario(grid=grid, mu=mu, lam=lam, source=source,
                            dirichlet=lambda pts, t, _f=dirichlet_f: _f(pts, t),
                            data_plus=dp, data_minus=dm,
                            zero_tol=zero_tol,
                            data_placement=st.get("data_placement", "forward_backward"),
                            name=raw.get("name", "scenario"))
        exact = data.get("exact")

    audit = dict(raw.get("audit") or {})
    _check_keys(audit, _AUDIT_KEYS, "audit")
    queries = dict(raw.get("queries") or {})
    _check_keys(queries, _QUERY_KEYS, "queries")
    return LoadedScenario(name=raw.get("name", "scenario"), raw=raw, grid=grid,
                          mu=mu, lam=lam, scenario=scenario, audit=audit,
                          queries=queries, exact=exact, path=src_path)


# ----------------------------------------------------------------------
# canonical TOML writer (restricted schema: nested tables of scalars/lists)
# ----------------------------------------------------------------------

def _fmt_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt_value(x) for x in v) + "]"
    raise ScenarioError(f"cannot serialize {type(v).__name__}")


def _dump_table(buf, table, prefix=""):
    scalars = {k: v for k, v in table.items() if not isinstance(v, dict)}
    subs = {k: v for k, v in table.items() if isinstance(v, dict)}
    for k in sorted(scalars):
        buf.write(f"{k} = {_fmt_value(scalars[k])}\n")
    for k in sorted(subs):
        name = f"{prefix}{k}"
        buf.write(f"\n[{name}]\n")
        _dump_table(buf, subs[k], prefix=name + ".")


def dump_toml(raw: dict) -> str:
    buf = io.StringIO()
    _dump_table(buf, raw)
    return buf.getvalue()


def bundled_dir() -> Path:
    return Path(__file__).parent / "scenarios"


def bundled_path(name: str) -> Path:
    p = bundled_dir() / f"{name}.toml"
    if not p.exists():
        raise ScenarioError(f"no bundled scenario named {name!r}")
    return p


def list_bundled():
    return sorted(p.stem for p in bundled_dir().glob("*.toml"))
