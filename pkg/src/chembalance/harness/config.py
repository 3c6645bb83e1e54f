"""Run configuration and its flat ``key = value`` file format.

Keys mirror :class:`RunConfig` field names.  Refmap settings use a
``refmap.`` prefix (``refmap.z_bins``, ``refmap.eps_z``, ``refmap.eps_t``,
``refmap.enabled``).  Streams are written as species lists, e.g.
``fuel = H2:0.25 N2:0.75``.  ``#`` starts a comment.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from chembalance.mechanism import ONE_ATM, Mechanism, bundled_mechanism, load_mechanism
from chembalance.odesolver import ToleranceSpec
from chembalance.refmap import RefMapConfig

MODE_NAMES = ("standard", "balanced", "balanced-analytic")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    mechanism: str = "h2o2"
    nx: int = 64
    ny: int = 64
    workers: int = 8
    iterations: int = 50
    dt: float = 2e-6
    abstol: float = 1e-8
    reltol: float = 1e-5
    mode: str = "standard"
    refmap: RefMapConfig = field(default_factory=RefMapConfig)
    diffusivity: float = 1e-4
    seed: int = 0
    pressure: float = ONE_ATM
    length: float = 8e-3
    t_base: float = 800.0
    t_peak: float = 1500.0
    # profile width as a fraction of the domain length
    width: float = 1.0 / 20.0
    # wavy-interface displacement amplitude, in units of the profile width
    interface_amplitude: float = 0.0
    fuel: Optional[dict] = None
    oxidizer: Optional[dict] = None
    theta: float = 0.02
    fd_eta: float = 1e-6
    snapshot_every: int = 0

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.nx < 1 or self.ny < 1:
            raise ConfigError("grid dimensions must be positive")
        if self.nx * self.ny < self.workers:
            raise ConfigError(f"{self.nx}x{self.ny} grid cannot feed {self.workers} workers")
        if self.mode not in MODE_NAMES:
            raise ConfigError(f"mode must be one of {MODE_NAMES}, got {self.mode!r}")
        if self.iterations < 0:
            raise ConfigError("iterations must be nonnegative")
        for name in ("dt", "abstol", "reltol", "pressure", "length", "width", "t_base", "t_peak"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.diffusivity < 0:
            raise ConfigError("diffusivity must be nonnegative")

    @property
    def tolerance(self) -> ToleranceSpec:
        return ToleranceSpec(self.abstol, self.reltol)

    def load_mechanism(self) -> Mechanism:
        path = Path(self.mechanism)
        mech = load_mechanism(path) if path.suffix or path.exists() else bundled_mechanism(self.mechanism)
        if self.fuel is not None or self.oxidizer is not None:
            mech = mech.with_streams(self.fuel or mech.fuel_stream, self.oxidizer or mech.oxidizer_stream)
        return mech

    def replace(self, **changes) -> RunConfig:
        refmap_changes = {k[len("refmap.") :]: changes.pop(k) for k in list(changes) if k.startswith("refmap.")}
        if refmap_changes:
            changes["refmap"] = dataclasses.replace(changes.get("refmap", self.refmap), **refmap_changes)
        try:
            return dataclasses.replace(self, **changes)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_stream(text: str) -> dict:
    out = {}
    for tok in text.split():
        name, sep, val = tok.partition(":")
        if not sep:
            raise ValueError(f"expected name:value, got {tok!r}")
        out[name] = float(val)
    return out


_REFMAP_TYPES = {"z_bins": int, "eps_z": float, "eps_t": float, "enabled": _parse_bool}


def _converter(key: str):
    if key.startswith("refmap."):
        return _REFMAP_TYPES.get(key[len("refmap.") :])
    if key in ("fuel", "oxidizer"):
        return _parse_stream
    f = {f.name: f for f in dataclasses.fields(RunConfig)}.get(key)
    if f is None or key == "refmap":
        return None
    default = f.default
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return str


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    changes = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        conv = _converter(key)
        if conv is None:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in changes:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            changes[key] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    return (base or RunConfig()).replace(**changes)


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def shipped_config(name: str = "shear_layer") -> RunConfig:
    """The bundled shear-layer configuration used by the acceptance suite."""
    text = resources.files("chembalance").joinpath("data").joinpath(f"{name}.cfg").read_text()
    return parse_config(text)
