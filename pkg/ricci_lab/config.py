"""Experiment configuration: YAML or JSON files mapped onto frozen dataclasses.

Every section has defaults, so a config file only needs the keys it changes.
``dt: auto`` resolves to half the CFL bound of the initial metric (``T/200``
on spheres). ``RICCI_LAB_OUTPUT`` overrides ``run.output_dir``.
"""

import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import pandas as pd
import yaml

from .errors import ConfigInvalid
from .flow import FLOW_KINDS, AverageScalar, Constant, EigenNormalized, TestFunction
from .geometry import MIN_GRID, SCHEMES, ConformalTorus, RoundSphere, smooth_random_field
from .harness import ALL_CHECKS
from .spectral import DENSE_MAX_NODES

logger = logging.getLogger(__name__)

_DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
DEFAULT_CONFIG_FILE = os.path.join(_DATA_DIR, "default.yaml")
OUTPUT_ENV = "RICCI_LAB_OUTPUT"
ORACLE_MAX_GRID = math.isqrt(DENSE_MAX_NODES)

FAMILIES = ("torus", "sphere")
INITIALS = ("flat", "sinusoid", "random", "file")
PROVIDERS = ("constant", "average_scalar", "eigen_normalized", "test_function")


def rng_for(seed, name):
    """Independent, reproducible generator for the named consumer of ``seed``."""
    key = int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:4], "little")
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))


# ---------------------------------------------------------------------------
# Sections
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricConfig:
    family: str = "torus"
    nx: int = 32
    ny: int = 32
    Lx: float = 3.0
    Ly: float = 3.0
    scheme: str = "spectral"
    initial: str = "sinusoid"
    amplitude: float = 0.1
    modes: tuple = ((1, 0), (0, 1))
    u_file: str = None
    n: int = 2
    r2: float = 1.0


@dataclass(frozen=True)
class FlowConfig:
    kind: str = "ricci"
    provider: str = "constant"
    s0: float = -1.0
    provider_k: float = 1.0
    T: float = 0.04
    dt: object = "auto"
    tau0: float = None


@dataclass(frozen=True)
class SpectralConfig:
    tol: float = 1e-9
    max_iter: int = 2000
    ks: tuple = (1.0, 2.0, 5.0)


@dataclass(frozen=True)
class RunSection:
    seed: int = 20240917
    output_dir: str = "ricci_lab_output"
    workers: int = 1
    progress: bool = False
    coupled: bool = True


@dataclass(frozen=True)
class ChecksConfig:
    enabled: tuple = ALL_CHECKS
    eps_seq: tuple = (1e-3, 5e-4, 2.5e-4)
    identity_grid: int = 64
    dlambda_steps: int = 8
    oracle_grid: int = 24
    oracle_sinusoid_grid: int = 64
    oracle_samples: int = 20
    form_samples: int = 100
    convergence_levels: tuple = (64, 128, 256)


@dataclass(frozen=True)
class SweepConfig:
    ks: tuple = (1.0, 2.0, 5.0)
    s_values: tuple = (0.0, -1.0, -5.0)


_SECTIONS = {
    "metric": MetricConfig,
    "flow": FlowConfig,
    "spectral": SpectralConfig,
    "run": RunSection,
    "checks": ChecksConfig,
    "sweep": SweepConfig,
}


@dataclass(frozen=True)
class Config:
    metric: MetricConfig = field(default_factory=MetricConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    run: RunSection = field(default_factory=RunSection)
    checks: ChecksConfig = field(default_factory=ChecksConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    source: str = None

    def initial_metric(self):
        """The metric the configured flow starts from."""
        return _build_metric(self.metric, self.run.seed)

    def identity_metric(self):
        """Same family as :meth:`initial_metric` on the identity-check grid."""
        m = self.metric
        if m.family == "sphere" or m.initial == "file":
            return self.initial_metric()
        grid = self.checks.identity_grid
        return _build_metric(replace(m, nx=grid, ny=grid), self.run.seed)

    def provider(self, metric=None):
        """The configured ``s`` provider (``None`` for Ricci flow)."""
        f = self.flow
        if f.kind == "ricci":
            return None
        if f.kind == "normalized" or f.provider == "average_scalar":
            return AverageScalar()
        if f.provider == "constant":
            return Constant(f.s0)
        if f.provider == "eigen_normalized":
            return EigenNormalized(f.provider_k, self.spectral.tol)
        metric = metric if metric is not None else self.initial_metric()
        phi = smooth_random_field(metric, rng_for(self.run.seed, "test_function"))
        return TestFunction(phi, f.provider_k)

    def to_dict(self):
        out = {name: _plain(asdict(getattr(self, name))) for name in _SECTIONS}
        out["source"] = self.source
        return out


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


# ---------------------------------------------------------------------------
# Metric construction
# ---------------------------------------------------------------------------

def _load_u(path):
    """Conformal factor grid from ``.npy`` or a headerless ``.csv``."""
    if path.endswith(".npy"):
        return np.load(path)
    if path.endswith(".csv") or path.endswith(".txt"):
        return pd.read_csv(path, header=None).to_numpy(dtype=float)
    raise ConfigInvalid("metric.u_file", "unsupported file format, use .npy or .csv")


def _build_metric(m, seed):
    if m.family == "sphere":
        return RoundSphere(m.n, m.r2)
    if m.initial == "flat":
        return ConformalTorus.flat(m.nx, m.ny, m.Lx, m.Ly, m.scheme)
    if m.initial == "sinusoid":
        return ConformalTorus.sinusoid(m.nx, m.ny, m.Lx, m.Ly, m.amplitude, m.modes, m.scheme)
    if m.initial == "random":
        flat = ConformalTorus.flat(m.nx, m.ny, m.Lx, m.Ly, m.scheme)
        return flat.with_u(smooth_random_field(flat, rng_for(seed, "initial_metric"),
                                               amplitude=m.amplitude))
    try:
        u = _load_u(m.u_file)
    except OSError as exc:
        raise ConfigInvalid("metric.u_file", f"cannot read {m.u_file}: {exc}") from exc
    return ConformalTorus(u, m.Lx, m.Ly, m.scheme)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _number(section, key, value, kind=float, minimum=None, strict=False, maximum=None):
    name = f"{section}.{key}"
    if isinstance(value, bool) or value is None:
        raise ConfigInvalid(name, f"expected a number, got {value!r}")
    try:
        number = kind(value)
    except (TypeError, ValueError):
        raise ConfigInvalid(name, f"expected a number, got {value!r}") from None
    if kind is int and number != value:
        raise ConfigInvalid(name, f"expected an integer, got {value!r}")
    if not math.isfinite(number):
        raise ConfigInvalid(name, "must be finite")
    if minimum is not None and (number <= minimum if strict else number < minimum):
        bound = ">" if strict else ">="
        raise ConfigInvalid(name, f"must be {bound} {minimum}, got {number}")
    if maximum is not None and number > maximum:
        raise ConfigInvalid(name, f"must be <= {maximum}, got {number}")
    return number


def _choice(section, key, value, options):
    if value not in options:
        raise ConfigInvalid(f"{section}.{key}", f"'{value}' is not one of {options}")
    return value


def _sequence(section, key, value, minimum_length=1):
    if isinstance(value, (str, bytes)) or not hasattr(value, "__iter__"):
        raise ConfigInvalid(f"{section}.{key}", f"expected a list, got {value!r}")
    value = tuple(value)
    if len(value) < minimum_length:
        raise ConfigInvalid(f"{section}.{key}", f"needs at least {minimum_length} entries")
    return value


def _section(name, raw):
    cls = _SECTIONS[name]
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigInvalid(name, f"expected a mapping, got {type(raw).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigInvalid(f"{name}.{unknown[0]}", f"unknown key (valid: {sorted(known)})")
    return cls(**raw)


def _validate_metric(m):
    _choice("metric", "family", m.family, FAMILIES)
    _choice("metric", "initial", m.initial, INITIALS)
    _choice("metric", "scheme", m.scheme, SCHEMES)
    nx = _number("metric", "nx", m.nx, int, MIN_GRID)
    ny = _number("metric", "ny", m.ny, int, MIN_GRID)
    Lx = _number("metric", "Lx", m.Lx, minimum=0, strict=True)
    Ly = _number("metric", "Ly", m.Ly, minimum=0, strict=True)
    modes = tuple(tuple(int(c) for c in mode)
                  for mode in _sequence("metric", "modes", m.modes))
    if any(len(mode) != 2 for mode in modes):
        raise ConfigInvalid("metric.modes", "each mode is a pair [mx, my]")
    if m.initial == "file" and m.family == "torus" and not m.u_file:
        raise ConfigInvalid("metric.u_file", "required when initial is 'file'")
    return replace(
        m, nx=nx, ny=ny, Lx=Lx, Ly=Ly, modes=modes,
        amplitude=_number("metric", "amplitude", m.amplitude),
        n=_number("metric", "n", m.n, int, 2),
        r2=_number("metric", "r2", m.r2, minimum=0, strict=True),
    )


def _validate_flow(f):
    _choice("flow", "kind", f.kind, FLOW_KINDS)
    _choice("flow", "provider", f.provider, PROVIDERS)
    dt = f.dt
    if dt != "auto":
        dt = _number("flow", "dt", dt, minimum=0, strict=True)
    tau0 = f.tau0
    if tau0 is not None:
        tau0 = _number("flow", "tau0", tau0, minimum=0, strict=True)
    return replace(
        f, dt=dt, tau0=tau0,
        s0=_number("flow", "s0", f.s0),
        provider_k=_number("flow", "provider_k", f.provider_k, minimum=1),
        T=_number("flow", "T", f.T, minimum=0, strict=True),
    )


def _validate_ks(section, values):
    return tuple(_number(section, "ks", k, minimum=1) for k in _sequence(section, "ks", values))


def _validate_checks(c):
    enabled = ALL_CHECKS if c.enabled == "all" else _sequence("checks", "enabled", c.enabled)
    for name in enabled:
        _choice("checks", "enabled", name, ALL_CHECKS)
    eps = tuple(_number("checks", "eps_seq", e, minimum=0, strict=True)
                for e in _sequence("checks", "eps_seq", c.eps_seq, 2))
    levels = tuple(_number("checks", "convergence_levels", n, int, MIN_GRID)
                   for n in _sequence("checks", "convergence_levels", c.convergence_levels, 2))
    return replace(
        c, enabled=tuple(enabled), eps_seq=eps, convergence_levels=levels,
        identity_grid=_number("checks", "identity_grid", c.identity_grid, int, MIN_GRID),
        dlambda_steps=_number("checks", "dlambda_steps", c.dlambda_steps, int, 2),
        oracle_grid=_number("checks", "oracle_grid", c.oracle_grid, int, MIN_GRID,
                            maximum=ORACLE_MAX_GRID),
        oracle_sinusoid_grid=_number("checks", "oracle_sinusoid_grid", c.oracle_sinusoid_grid,
                                     int, MIN_GRID, maximum=ORACLE_MAX_GRID),
        oracle_samples=_number("checks", "oracle_samples", c.oracle_samples, int, 1),
        form_samples=_number("checks", "form_samples", c.form_samples, int, 1),
    )


def _resolve_dt(config):
    """Replace ``dt: auto`` with a concrete step."""
    if config.flow.dt != "auto":
        return config
    metric = config.initial_metric()
    bound = metric.cfl_bound()
    dt = 0.5 * bound if math.isfinite(bound) else config.flow.T / 200.0
    logger.debug("dt auto -> %.6g (CFL bound %.6g)", dt, bound)
    return replace(config, flow=replace(config.flow, dt=dt))


def config_from_dict(data, source=None):
    """Validate a parsed mapping and build a :class:`Config`.

    Raises
    ------
    ConfigInvalid
        On unknown sections or keys, wrong types and out-of-range values.
    """
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigInvalid("<root>", f"expected a mapping, got {type(data).__name__}")
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise ConfigInvalid(unknown[0], f"unknown section (valid: {sorted(_SECTIONS)})")
    try:
        sections = {name: _section(name, data.get(name)) for name in _SECTIONS}
    except TypeError as exc:
        raise ConfigInvalid("<root>", str(exc)) from None

    run = sections["run"]
    run = replace(
        run,
        seed=_number("run", "seed", run.seed, int, 0),
        workers=_number("run", "workers", run.workers, int, 1),
        output_dir=os.environ.get(OUTPUT_ENV) or run.output_dir,
    )
    spectral = sections["spectral"]
    spectral = replace(
        spectral,
        tol=_number("spectral", "tol", spectral.tol, minimum=0, strict=True),
        max_iter=_number("spectral", "max_iter", spectral.max_iter, int, 1),
        ks=_validate_ks("spectral", spectral.ks),
    )
    sweep = sections["sweep"]
    sweep = replace(
        sweep,
        ks=_validate_ks("sweep", sweep.ks),
        s_values=tuple(_number("sweep", "s_values", s)
                       for s in _sequence("sweep", "s_values", sweep.s_values)),
    )
    config = Config(
        metric=_validate_metric(sections["metric"]),
        flow=_validate_flow(sections["flow"]),
        spectral=spectral,
        run=run,
        checks=_validate_checks(sections["checks"]),
        sweep=sweep,
        source=source,
    )
    return _resolve_dt(config)


def load_config(filepath=None):
    """Load a ``.yaml``/``.yml`` or ``.json`` config; the bundled default when ``None``."""
    filepath = filepath or DEFAULT_CONFIG_FILE
    try:
        with open(filepath, "r") as f:
            if filepath.endswith(".json"):
                data = json.load(f)
            elif filepath.endswith(".yaml") or filepath.endswith(".yml"):
                data = yaml.safe_load(f)
            else:
                raise ConfigInvalid("<file>", "unsupported file format, use .json or .yaml")
    except OSError as exc:
        raise ConfigInvalid("<file>", f"cannot read {filepath}: {exc}") from exc
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigInvalid("<file>", f"cannot parse {filepath}: {exc}") from exc
    logger.debug("loaded config %s", filepath)
    return config_from_dict(data, source=filepath)


def default_config():
    return load_config(DEFAULT_CONFIG_FILE)


def save_config_template(filepath="ricci_lab_config.yaml"):
    """Write the annotated default configuration (YAML) or its plain JSON form."""
    if filepath.endswith(".json"):
        data = config_from_dict({}).to_dict()
        data.pop("source")
        data["flow"]["dt"] = "auto"
        with open(filepath, "w") as f:
            json.dump(data, f, indent=2)
    else:
        with open(DEFAULT_CONFIG_FILE, "r") as src, open(filepath, "w") as dst:
            dst.write(src.read())
    return filepath
