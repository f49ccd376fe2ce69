"""Experiment configuration: ``key = value`` lines grouped in ``[section]`` blocks.

Every key is validated on load; unknown sections or keys, malformed values
and violated constraints raise :class:`ConfigError` naming the file, line,
section and key.
"""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

DEFAULT_NU = 0.1
DEFAULT_AMPLITUDE = 1.0
DEFAULT_DT = 0.025


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class DomainSection:
    L1: float = 2 * math.pi
    L2: float = 2 * math.pi
    L3: float = 2 * math.pi


@dataclass
class GridSection:
    N1: int = 32
    N2: int = 32
    N3: int = 32


@dataclass
class PhysicsSection:
    nu: float = DEFAULT_NU
    f: float = 1.0
    forcing: str = "default"
    amplitude: float = DEFAULT_AMPLITUDE
    # one "component k1 k2 m re im" entry per line; used when forcing = entries
    forcing_entries: str = ""


@dataclass
class IntegratorSection:
    dt: float = DEFAULT_DT
    scheme: str = "IFRK4"
    cfl_guard: float = 1.0


@dataclass
class ObservationSection:
    kind: str = "modes"
    shells: int = 0
    lambda_max: float = 0.0
    multiplier: str = "random"


@dataclass
class ScheduleSection:
    alpha: float = 0.1
    beta: float = 0.1
    n_steps: int = 60
    jitter_seed: int = -1


@dataclass
class RunSection:
    seed: int = 0
    output: str = "out"
    initial_error: float = 1.0
    reference: str = ""
    spin_window: float = 5.0
    spin_tol: float = 0.05
    spin_max_time: float = 200.0
    duration: float = 10.0
    sample_every: float = 1.0
    margin: float = 0.05


@dataclass
class DefectSection:
    shells: str = "1,2,3,4,5"
    estimate: bool = True
    norms: bool = True


@dataclass
class SqueezeSection:
    shells: str = "1,2,4,8,16"
    times: str = ""
    n_pairs: int = 4
    separation: float = 1e-3


SECTIONS = {
    "domain": DomainSection,
    "grid": GridSection,
    "physics": PhysicsSection,
    "integrator": IntegratorSection,
    "observation": ObservationSection,
    "schedule": ScheduleSection,
    "run": RunSection,
    "defect": DefectSection,
    "squeeze": SqueezeSection,
}


@dataclass
class ExperimentConfig:
    domain: DomainSection = field(default_factory=DomainSection)
    grid: GridSection = field(default_factory=GridSection)
    physics: PhysicsSection = field(default_factory=PhysicsSection)
    integrator: IntegratorSection = field(default_factory=IntegratorSection)
    observation: ObservationSection = field(default_factory=ObservationSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    run: RunSection = field(default_factory=RunSection)
    defect: DefectSection = field(default_factory=DefectSection)
    squeeze: SqueezeSection = field(default_factory=SqueezeSection)
    source: str = "<defaults>"

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    def to_text(self) -> str:
        lines = []
        for name, sec in self.to_dict().items():
            lines.append(f"[{name}]")
            for k, v in sec.items():
                v = str(v).replace("\n", "\n    ")
                lines.append(f"{k} = {v}")
            lines.append("")
        return "\n".join(lines)


def _locate(text: str, section: str, key: str | None) -> int | None:
    """Line number of ``key`` inside ``[section]`` (or of the header)."""
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return i
            continue
        if key is not None and current == section:
            m = re.match(r"\s*([^=:#;\s][^=:]*?)\s*[=:]", line)
            if m and m.group(1).strip().lower() == key.lower():
                return i
    return None


def _convert(raw: str, typ, where: str):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError(raw)
            return v
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {typ.__name__}") from None


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",), empty_lines_in_values=False)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}".replace("\n", " ")) from None
    cfg = ExperimentConfig(source=source)
    for section in parser.sections():
        line = _locate(text, section, None)
        if section not in SECTIONS:
            raise ConfigError(f"{source}:{line}: unknown section [{section}]; "
                              f"expected one of {', '.join(SECTIONS)}")
        target = getattr(cfg, section)
        types = {f.name: f.type for f in fields(target)}
        for key, raw in parser.items(section):
            line = _locate(text, section, key)
            where = f"{source}:{line}: [{section}] {key}"
            if key not in types:
                raise ConfigError(f"{where}: unknown key; expected one of {', '.join(types)}")
            typ = {"float": float, "int": int, "str": str, "bool": bool}[types[key]]
            setattr(target, key, _convert(raw, typ, where))
    validate(cfg, text)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))


def parse_int_list(raw: str, where: str) -> list[int]:
    try:
        vals = [int(x) for x in raw.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"{where}: expected a list of integers, got {raw!r}") from None
    return vals


def parse_float_list(raw: str, where: str) -> list[float]:
    try:
        vals = [float(x) for x in raw.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"{where}: expected a list of numbers, got {raw!r}") from None
    return vals


def parse_forcing_entries(raw: str, where: str):
    entries = []
    for line in raw.splitlines():
        parts = line.replace(",", " ").split()
        if not parts:
            continue
        if len(parts) != 6:
            raise ConfigError(f"{where}: forcing entry {line.strip()!r} needs 'component k1 k2 m re im'")
        comp = parts[0]
        if comp not in ("v1", "v2", "b", "0", "1", "2"):
            raise ConfigError(f"{where}: forcing component must be v1, v2 or b, got {comp!r}")
        comp = int(comp) if comp.isdigit() else comp
        try:
            k1, k2, m = (int(p) for p in parts[1:4])
            re_, im_ = float(parts[4]), float(parts[5])
        except ValueError:
            raise ConfigError(f"{where}: malformed forcing entry {line.strip()!r}") from None
        entries.append((comp, k1, k2, m, re_, im_))
    return entries


def validate(cfg: ExperimentConfig, text: str = "") -> None:
    """Check cross-field constraints; raise :class:`ConfigError` with the location."""

    def fail(section, key, msg):
        line = _locate(text, section, key) if text else None
        loc = f"{cfg.source}:{line}" if line else cfg.source
        raise ConfigError(f"{loc}: [{section}] {key}: {msg}")

    for k in ("L1", "L2", "L3"):
        if getattr(cfg.domain, k) <= 0:
            fail("domain", k, "box length must be positive")
    for k in ("N1", "N2", "N3"):
        n = getattr(cfg.grid, k)
        if n < 8 or n % 2:
            fail("grid", k, f"grid size must be an even integer >= 8, got {n}")
    p = cfg.physics
    if p.nu <= 0:
        fail("physics", "nu", "viscosity must be positive")
    if p.forcing not in ("default", "none", "entries"):
        fail("physics", "forcing", f"unknown forcing {p.forcing!r}; use default, none or entries")
    if p.forcing == "entries":
        if not p.forcing_entries.strip():
            fail("physics", "forcing_entries", "forcing = entries needs at least one entry")
        parse_forcing_entries(p.forcing_entries, f"{cfg.source}: [physics] forcing_entries")
    i = cfg.integrator
    if i.dt <= 0:
        fail("integrator", "dt", "time step must be positive")
    if i.scheme != "IFRK4":
        fail("integrator", "scheme", f"unsupported scheme {i.scheme!r}; only IFRK4")
    if i.cfl_guard <= 0:
        fail("integrator", "cfl_guard", "must be positive")
    o = cfg.observation
    if o.kind not in ("modes", "generalized"):
        fail("observation", "kind", f"unknown kind {o.kind!r}; use modes or generalized")
    if o.shells < 0:
        fail("observation", "shells", "must be nonnegative")
    if o.lambda_max < 0:
        fail("observation", "lambda_max", "must be nonnegative")
    if o.shells and o.lambda_max:
        fail("observation", "lambda_max", "give either shells or lambda_max, not both")
    if o.multiplier not in ("identity", "smooth", "random"):
        fail("observation", "multiplier", f"unknown preset {o.multiplier!r}")
    s = cfg.schedule
    if not 0 < s.alpha <= s.beta:
        fail("schedule", "beta", f"need 0 < alpha <= beta, got alpha={s.alpha}, beta={s.beta}")
    if s.n_steps < 1:
        fail("schedule", "n_steps", "must be at least 1")
    r = cfg.run
    if r.seed < 0:
        fail("run", "seed", "must be nonnegative")
    if r.initial_error < 0:
        fail("run", "initial_error", "must be nonnegative")
    if r.spin_window <= 0 or r.spin_tol <= 0 or r.spin_max_time <= 0:
        fail("run", "spin_window", "spin-up window, tolerance and budget must be positive")
    if r.duration <= 0 or r.sample_every <= 0:
        fail("run", "duration", "duration and sample_every must be positive")
    if not 0 <= r.margin < 1:
        fail("run", "margin", "must lie in [0, 1)")
    shells = parse_int_list(cfg.defect.shells, f"{cfg.source}: [defect] shells")
    if not shells or min(shells) < 0:
        fail("defect", "shells", "need a nonempty list of nonnegative shell counts")
    shells = parse_int_list(cfg.squeeze.shells, f"{cfg.source}: [squeeze] shells")
    if not shells or min(shells) < 0:
        fail("squeeze", "shells", "need a nonempty list of nonnegative shell counts")
    times = parse_float_list(cfg.squeeze.times, f"{cfg.source}: [squeeze] times")
    if any(not s.alpha <= t <= s.beta for t in times):
        fail("squeeze", "times", f"times must lie in [alpha, beta] = [{s.alpha}, {s.beta}]")
    if cfg.squeeze.n_pairs < 1:
        fail("squeeze", "n_pairs", "must be at least 1")
    if cfg.squeeze.separation <= 0:
        fail("squeeze", "separation", "must be positive")
