"""Flat ``key = value`` experiment configuration.

One nesting level is allowed through dotted keys (``model.gamma = 1``).  Lines
starting with ``#`` and blank lines are ignored.  Lists are comma separated
and matrix rows are separated by ``;``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import models as M
from .schemes import SCHEME_NAMES

EXPERIMENTS = ("rate", "longtime", "density", "diagnostics")
SCHEME_DEFAULTS = {"delta": "3", "gamma": "2"}

# required model parameters per model name, in serialization order
MODEL_PARAMS = {
    "gbm": ("mu", "sigma", "x0"),
    "langevin": ("potential", "gamma", "beta", "x0"),
    "brownian_dynamics": ("potential", "beta", "x0"),
    "van_der_pol": ("gamma", "alpha", "beta", "phi", "x0"),
    "duffing_vdp": ("a1", "a2", "a3", "phi", "x0"),
    "lorenz": ("a1", "a2", "a3", "noise", "x0"),
    "lotka_volterra": ("b", "A", "sigma", "x0"),
}
POTENTIALS = {"double_well": M.double_well}

# top-level keys: name -> (converter, experiments that require it)
_ALL = set(EXPERIMENTS)
TOP_KEYS = {
    "experiment": (str, _ALL),
    "seed": (int, _ALL),
    "paths": (int, _ALL),
    "T": (float, _ALL),
    "output_dir": (str, _ALL),
    "levels": ("ints", {"rate", "diagnostics"}),
    "ref_level": (int, {"rate", "diagnostics"}),
    "r": (float, {"rate"}),
    "h": (float, {"longtime", "density"}),
    "orders": ("floats", {"longtime"}),
    "stride": (int, set()),
    "T_burn": (float, {"density"}),
    "bins": (int, {"density"}),
    "every": (float, set()),
    "p": (float, set()),
    "q": (float, set()),
}
OPTIONAL_DEFAULTS = {"stride": 1, "every": 1.0, "p": 4.0, "q": 4.0}


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is the 1-based source line when known."""

    def __init__(self, message: str, line: Optional[int] = None, source: str = "config"):
        self.line = line
        self.reason = message
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)


@dataclass
class ExperimentConfig:
    experiment: str
    model: dict
    scheme: dict
    seed: int
    paths: int
    T: float
    output_dir: str
    levels: tuple = ()
    ref_level: Optional[int] = None
    r: Optional[float] = None
    h: Optional[float] = None
    orders: tuple = ()
    stride: int = 1
    T_burn: Optional[float] = None
    bins: Optional[int] = None
    every: float = 1.0
    p: float = 4.0
    q: float = 4.0
    lines: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def delta(self) -> float:
        return float(self.scheme["delta"])

    @property
    def gamma(self) -> float:
        return float(self.scheme["gamma"])


def _fmt(value) -> str:
    if isinstance(value, (tuple, list)):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(kind, raw: str, key: str, line: int):
    try:
        if kind == "ints":
            return tuple(int(v) for v in raw.split(","))
        if kind == "floats":
            return tuple(float(v) for v in raw.split(","))
        return kind(raw)
    except ValueError:
        raise ConfigError(f"cannot parse {key} = {raw!r}", line) from None


def parse(text: str, source: str = "config") -> ExperimentConfig:
    """Parse and validate config text; errors carry the offending line number."""
    entries = {}
    lines = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {stripped!r}", no, source)
        key, value = (s.strip() for s in stripped.split("=", 1))
        if not key or not value:
            raise ConfigError(f"empty key or value in {stripped!r}", no, source)
        if key.count(".") > 1:
            raise ConfigError(f"only one nesting level is allowed: {key!r}", no, source)
        if key in entries:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})", no, source)
        entries[key] = value
        lines[key] = no
    try:
        return _build(entries, lines)
    except ConfigError as exc:
        raise ConfigError(exc.reason, exc.line, source) from None


def _build(entries: dict, lines: dict) -> ExperimentConfig:
    model, scheme, top = {}, {}, {}
    for key, value in entries.items():
        if "." in key:
            section, name = key.split(".")
            if section == "model":
                model[name] = value
            elif section == "scheme":
                scheme[name] = value
            else:
                raise ConfigError(f"unknown section {section!r}", lines[key])
        elif key in TOP_KEYS:
            top[key] = value
        else:
            raise ConfigError(f"unknown key {key!r}", lines[key])

    experiment = top.get("experiment")
    if experiment is None:
        raise ConfigError("missing required key 'experiment'")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; valid: {', '.join(EXPERIMENTS)}",
                          lines["experiment"])
    values = dict(OPTIONAL_DEFAULTS)
    for key, (kind, needed) in TOP_KEYS.items():
        if key in top:
            values[key] = _convert(kind, top[key], key, lines[key])
        elif experiment in needed:
            raise ConfigError(f"experiment {experiment!r} requires key {key!r}")

    _check_scheme(scheme, lines)
    _check_model(model, lines)
    cfg = ExperimentConfig(model=model, scheme=scheme, lines=lines, **values)
    _check_numbers(cfg)
    build_model(cfg.model, lines)
    return cfg


def _check_scheme(scheme: dict, lines: dict) -> None:
    name = scheme.get("name")
    if name is None:
        raise ConfigError("missing required key 'scheme.name'")
    if name not in SCHEME_NAMES:
        raise ConfigError(f"unknown scheme {name!r}; valid schemes: {', '.join(SCHEME_NAMES)}",
                          lines["scheme.name"])
    for key in scheme:
        if key not in ("name", "delta", "gamma"):
            raise ConfigError(f"unknown scheme parameter {key!r}", lines[f"scheme.{key}"])
    for key, default in SCHEME_DEFAULTS.items():
        scheme.setdefault(key, default)
        try:
            float(scheme[key])
        except ValueError:
            raise ConfigError(f"scheme.{key} must be a number", lines.get(f"scheme.{key}")) from None
    if float(scheme["delta"]) < 2:
        raise ConfigError("scheme.delta must be >= 2", lines.get("scheme.delta"))
    if float(scheme["gamma"]) <= 1:
        raise ConfigError("scheme.gamma must exceed 1", lines.get("scheme.gamma"))


def _check_model(model: dict, lines: dict) -> None:
    name = model.get("name")
    if name is None:
        raise ConfigError("missing required key 'model.name'")
    if name not in MODEL_PARAMS:
        raise ConfigError(f"unknown model {name!r}; valid models: {', '.join(MODEL_PARAMS)}",
                          lines["model.name"])
    wanted = MODEL_PARAMS[name]
    for key in model:
        if key != "name" and key not in wanted:
            raise ConfigError(f"parameter {key!r} does not apply to model {name!r}",
                              lines[f"model.{key}"])
    for key in wanted:
        if key not in model:
            raise ConfigError(f"model {name!r} requires parameter 'model.{key}'",
                              lines["model.name"])


def _check_numbers(cfg: ExperimentConfig) -> None:
    ln = cfg.lines.get
    if cfg.paths < 1:
        raise ConfigError("paths must be at least 1", ln("paths"))
    if not cfg.T > 0:
        raise ConfigError("T must be positive", ln("T"))
    if cfg.experiment in ("rate", "diagnostics"):
        if len(cfg.levels) < 2:
            raise ConfigError("need at least two levels to fit a slope", ln("levels"))
        bound = max(cfg.levels) + (1 if cfg.experiment == "rate" else 0)
        if not cfg.ref_level > bound:
            rel = "max(levels) + 1" if cfg.experiment == "rate" else "max(levels)"
            raise ConfigError(f"ref_level must exceed {rel}", ln("ref_level"))
    if cfg.r is not None and not cfg.r > 0:
        raise ConfigError("r must be positive", ln("r"))
    if cfg.h is not None and not cfg.h > 0:
        raise ConfigError("h must be positive", ln("h"))
    if cfg.experiment == "density":
        if not 0 <= cfg.T_burn < cfg.T:
            raise ConfigError("T_burn must lie in [0, T)", ln("T_burn"))
        if cfg.bins < 1:
            raise ConfigError("bins must be at least 1", ln("bins"))
    if cfg.stride < 1:
        raise ConfigError("stride must be at least 1", ln("stride"))


def _floats(raw: str, key: str, lines: dict):
    try:
        return [float(v) for v in raw.split(",")]
    except ValueError:
        raise ConfigError(f"cannot parse {key} = {raw!r}", lines.get(key)) from None


def _matrix(raw: str, key: str, lines: dict) -> np.ndarray:
    rows = [_floats(r, key, lines) for r in raw.split(";")]
    if len({len(r) for r in rows}) != 1:
        raise ConfigError(f"ragged matrix in {key}", lines.get(key))
    return np.array(rows)


def _phi(raw: str, key: str, lines: dict) -> M.Phi:
    parts = raw.split(None, 1)
    if len(parts) != 2 or parts[0] not in ("const", "linear"):
        raise ConfigError(f"{key} must be 'const c1,..' or 'linear c1,..'", lines.get(key))
    return M.Phi(parts[0], _floats(parts[1], key, lines))


def build_model(params: dict, lines: Optional[dict] = None) -> M.SdeModel:
    """Construct the model described by a ``model.*`` parameter map."""
    lines = lines or {}
    name = params["name"]

    def num(key):
        return _floats(params[key], f"model.{key}", lines)[0]

    def vec(key):
        return _floats(params[key], f"model.{key}", lines)

    def potential():
        pot = params["potential"]
        if pot not in POTENTIALS:
            raise ConfigError(f"unknown potential {pot!r}; valid: {', '.join(POTENTIALS)}",
                              lines.get("model.potential"))
        return POTENTIALS[pot]()

    try:
        if name == "gbm":
            return M.geometric_brownian_motion(num("mu"), num("sigma"), num("x0"))
        if name == "langevin":
            return M.langevin(potential(), num("gamma"), num("beta"), vec("x0"))
        if name == "brownian_dynamics":
            return M.brownian_dynamics(potential(), num("beta"), vec("x0"))
        if name == "van_der_pol":
            return M.van_der_pol(num("gamma"), num("alpha"), num("beta"),
                                 _phi(params["phi"], "model.phi", lines), vec("x0"))
        if name == "duffing_vdp":
            return M.duffing_van_der_pol(num("a1"), num("a2"), num("a3"),
                                         _phi(params["phi"], "model.phi", lines), vec("x0"))
        if name == "lorenz":
            return M.lorenz_additive(num("a1"), num("a2"), num("a3"),
                                     _matrix(params["noise"], "model.noise", lines), vec("x0"))
        coeffs = M.LvCoefficients(
            b=vec("b"), A=_matrix(params["A"], "model.A", lines),
            sigma=_matrix(params["sigma"], "model.sigma", lines), x0=vec("x0"))
        return M.lotka_volterra(coeffs)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"invalid {name} parameters: {exc}", lines.get("model.name")) from None


def serialize(cfg: ExperimentConfig) -> str:
    """Canonical text form; ``parse(serialize(cfg))`` reproduces ``cfg``."""
    out = [f"experiment = {cfg.experiment}"]
    for key in ("seed", "paths", "T", "output_dir"):
        out.append(f"{key} = {_fmt(getattr(cfg, key))}")
    for key in TOP_KEYS:
        if key in ("experiment", "seed", "paths", "T", "output_dir"):
            continue
        value = getattr(cfg, key)
        if value is None or value == ():
            continue
        out.append(f"{key} = {_fmt(value)}")
    out.append(f"model.name = {cfg.model['name']}")
    for key in MODEL_PARAMS[cfg.model["name"]]:
        out.append(f"model.{key} = {cfg.model[key]}")
    for key in ("name", "delta", "gamma"):
        out.append(f"scheme.{key} = {cfg.scheme[key]}")
    return "\n".join(out) + "\n"


def load(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read(), source=str(path))


def apply_overrides(text: str, overrides) -> str:
    """Replace or append ``key=value`` pairs in config text."""
    pending = {}
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value", source="override")
        key, value = (s.strip() for s in item.split("=", 1))
        pending[key] = value
    out = []
    for raw in text.splitlines():
        key = raw.split("=", 1)[0].strip() if "=" in raw else None
        if key in pending:
            out.append(f"{key} = {pending.pop(key)}")
        else:
            out.append(raw)
    out.extend(f"{k} = {v}" for k, v in pending.items())
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# presets

_LANGEVIN = """model.name = langevin
model.potential = double_well
model.gamma = 1.0
model.beta = 2.0
model.x0 = 1.0,1.0
"""
_VDP = """model.name = van_der_pol
model.gamma = 0.2
model.alpha = 0.2
model.beta = 1.0
model.x0 = 0.5,1.5
"""
_LV = """model.name = lotka_volterra
model.b = 1.0,0.5
model.A = 1.0,0.5;0.0,0.5
model.x0 = 1.0,3.0
"""
_LV_SIGMA = "model.sigma = 1.0,0.0;0.0,0.75\n"
_LV_SIGMA_DOUBLED = "model.sigma = 2.0,0.0;0.0,1.5\n"
_RATE = """experiment = rate
seed = 0
paths = 500
T = 1.0
levels = 6,7,8,9,10
ref_level = 12
r = 2.0
"""
_LV_LONG = """experiment = longtime
seed = 0
T = 500.0
orders = 1.0,2.0
scheme.name = lv_milstein
"""

PRESETS = {
    "langevin-rate": _RATE + _LANGEVIN + "scheme.name = sitem\noutput_dir = out/langevin-rate\n",
    "vdp-rate-additive": _RATE + _VDP + "model.phi = const 0.31622776601683794\n"
    "scheme.name = sitem\noutput_dir = out/vdp-rate-additive\n",
    "vdp-rate-multiplicative": _RATE + _VDP + "model.phi = linear 0.8\n"
    "scheme.name = sitem\noutput_dir = out/vdp-rate-multiplicative\n",
    "lorenz-rate": _RATE + """model.name = lorenz
model.a1 = 1.0
model.a2 = 1.0
model.a3 = 1.0
model.noise = 0.5,0.0,0.0;0.0,0.5,0.0;0.0,0.0,0.5
model.x0 = 1.0,1.0,1.0
scheme.name = sitem
output_dir = out/lorenz-rate
""",
    "lv-rate": _RATE + _LV + _LV_SIGMA + "scheme.name = lv_milstein\noutput_dir = out/lv-rate\n",
    "lv-longtime": _LV_LONG + _LV + _LV_SIGMA
    + "paths = 2000\nh = 0.0078125\nstride = 128\noutput_dir = out/lv-longtime\n",
    "lv-permanence": _LV_LONG + _LV + _LV_SIGMA
    + "paths = 500\nh = 0.125\noutput_dir = out/lv-permanence\n",
    "lv-extinction": _LV_LONG + _LV + _LV_SIGMA_DOUBLED
    + "paths = 500\nh = 0.125\noutput_dir = out/lv-extinction\n",
    "langevin-density": """experiment = density
seed = 0
paths = 200
T = 500.0
T_burn = 100.0
h = 0.0078125
bins = 60
every = 1.0
""" + _LANGEVIN + "scheme.name = sitem\noutput_dir = out/langevin-density\n",
    "sitem-defects": """experiment = diagnostics
seed = 0
paths = 200
T = 1.0
levels = 6,7,8,9,10
ref_level = 12
""" + _LANGEVIN + "scheme.name = sitem\nscheme.delta = 3\noutput_dir = out/sitem-defects\n",
}

PRESET_NOTES = {
    "langevin-rate": "SITEM strong rate, double-well Langevin",
    "vdp-rate-additive": "SITEM strong rate, van der Pol with additive noise",
    "vdp-rate-multiplicative": "SITEM strong rate, van der Pol with multiplicative noise",
    "lorenz-rate": "SITEM strong rate, stochastic Lorenz with additive noise",
    "lv-rate": "linear-implicit Milstein strong rate, Lotka-Volterra",
    "lv-longtime": "Lotka-Volterra moments E|Y_t|, E|Y_t|^2 up to T=500",
    "lv-permanence": "Lotka-Volterra at h=1/8 up to T=500, base noise",
    "lv-extinction": "Lotka-Volterra at h=1/8 up to T=500, noise doubled",
    "langevin-density": "SITEM stationary x1-marginal against the Gibbs density",
    "sitem-defects": "SITEM defect integrals and implied constants, Langevin",
}
