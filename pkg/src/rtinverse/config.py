"""Experiment configuration files.

Format: ``[section]`` headers followed by ``key = value`` lines; ``#`` starts a
comment.  Keys that describe fields may be repeated and their primitives are
summed::

    [grid]
    Nr = 64
    Nbeta = 256
    Ntheta = 64

    [medium]
    a = constant(0.5)
    a = gaussian(0.2, 0.0, 0.35, 0.8)    # cx, cy, width, amplitude
    k0 = gaussian(-0.1, 0.0, 0.3, 0.3)
    M = 1

    [source]
    f0 = gaussian(0.1, 0.2, 0.25, 1.0)
    F = perp_gradient
    psi = gaussian(-0.2, -0.1, 0.25, 1.0)

Field primitives: ``constant(c)``, ``gaussian(cx, cy, width, amplitude)``,
``poly_r(c0, c1, ...)`` (sum of ``c_k r^k``) and ``file(path)`` (a field CSV on
the same grid).  The vector source is ``F = none | gradient | perp_gradient |
explicit``; the first two use the ``psi`` lines, ``explicit`` uses ``F1``/``F2``.
"""

from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .grid import DirectionGrid, PolarGrid, gradient, read_field_csv
from .transport import MediumSpec, SourceSpec


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""

    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"field '{key}'")
        prefix = (", ".join(where) + ": ") if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.key = key


_PRIM = re.compile(r"^\s*([a-z_]+)\s*\((.*)\)\s*$")


@dataclass
class Primitive:
    kind: str
    args: tuple
    base: str = "."

    def value(self, grid: PolarGrid) -> np.ndarray:
        x, y = grid.z.real, grid.z.imag
        if self.kind == "constant":
            return np.full(grid.shape, float(self.args[0]))
        if self.kind == "gaussian":
            cx, cy, w, amp = self.args
            return amp * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / w**2)
        if self.kind == "poly_r":
            r = np.abs(grid.z)
            return sum(c * r**k for k, c in enumerate(self.args))
        if self.kind == "file":
            fgrid, vals = read_field_csv(os.path.join(self.base, self.args[0]))
            if fgrid != grid:
                raise ConfigError(f"grid of {self.args[0]} ({fgrid.nr}x{fgrid.nbeta}) does not "
                                  f"match the configured grid ({grid.nr}x{grid.nbeta})")
            return np.real(vals)
        raise AssertionError(self.kind)

    def gradient(self, grid: PolarGrid) -> np.ndarray:
        x, y = grid.z.real, grid.z.imag
        if self.kind == "constant":
            return np.zeros((2,) + grid.shape)
        if self.kind == "gaussian":
            cx, cy, w, _ = self.args
            v = self.value(grid)
            return np.stack([-2 * (x - cx) / w**2 * v, -2 * (y - cy) / w**2 * v])
        if self.kind == "poly_r":
            r = np.abs(grid.z)
            dr = sum(k * c * r ** (k - 1) for k, c in enumerate(self.args) if k > 0)
            dr = dr if not np.isscalar(dr) else np.full(grid.shape, float(dr))
            return np.stack([dr * x / r, dr * y / r])
        return gradient(self.value(grid), grid)


@dataclass
class Profile:
    """Sum of primitives."""

    terms: list = field(default_factory=list)

    def __bool__(self):
        return bool(self.terms)

    def evaluate(self, grid: PolarGrid) -> np.ndarray:
        out = np.zeros(grid.shape)
        for t in self.terms:
            out = out + t.value(grid)
        return out

    def gradient(self, grid: PolarGrid) -> np.ndarray:
        out = np.zeros((2,) + grid.shape)
        for t in self.terms:
            out = out + t.gradient(grid)
        return out


_ARITY = {"constant": (1, 1), "gaussian": (4, 4), "poly_r": (1, 32), "file": (1, 1)}


def parse_primitive(text: str, line: int, key: str, base: str = ".") -> Primitive:
    m = _PRIM.match(text)
    if not m:
        raise ConfigError(f"expected a primitive like gaussian(...), got '{text}'", line, key)
    kind, body = m.group(1), m.group(2)
    if kind not in _ARITY:
        raise ConfigError(f"unknown primitive '{kind}'", line, key)
    parts = [p.strip() for p in body.split(",")] if body.strip() else []
    lo, hi = _ARITY[kind]
    if not lo <= len(parts) <= hi:
        raise ConfigError(f"{kind} takes {lo if lo == hi else f'{lo}..{hi}'} arguments, "
                          f"got {len(parts)}", line, key)
    if kind == "file":
        return Primitive(kind, (parts[0].strip("'\""),), base)
    try:
        args = tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"non-numeric argument in '{text}'", line, key) from None
    if not all(np.isfinite(args)):
        raise ConfigError(f"non-finite argument in '{text}'", line, key)
    if kind == "gaussian" and args[2] <= 0:
        raise ConfigError(f"gaussian width must be positive, got {args[2]:g}", line, f"{key}.width")
    return Primitive(kind, args, base)


@dataclass
class SourceBlock:
    f0: Profile = field(default_factory=Profile)
    F_kind: str = "none"
    psi: Profile = field(default_factory=Profile)
    F1: Profile = field(default_factory=Profile)
    F2: Profile = field(default_factory=Profile)

    def build(self, grid: PolarGrid) -> SourceSpec:
        f0 = self.f0.evaluate(grid)
        if self.F_kind == "none":
            F = np.zeros((2,) + grid.shape)
        elif self.F_kind == "gradient":
            F = self.psi.gradient(grid)
        elif self.F_kind == "perp_gradient":
            g = self.psi.gradient(grid)
            F = np.stack([-g[1], g[0]])
        else:
            F = np.stack([self.F1.evaluate(grid), self.F2.evaluate(grid)])
        return SourceSpec(grid, f0, F)

    def isotropic(self, grid: PolarGrid) -> SourceSpec:
        return SourceSpec(grid, self.f0.evaluate(grid), np.zeros((2,) + grid.shape))


_SECTIONS = {"grid", "medium", "source", "source_tilde", "solver", "run"}
_GRID_KEYS = {"nr": int, "nbeta": int, "ntheta": int, "n": int, "h_ray": float}
_SOLVER_KEYS = {"tol": float, "max_iter": int, "noise_std": float}
_RUN_KEYS = {"command", "out", "seed", "variant", "isotropic_data", "mask", "levels"}


@dataclass
class Config:
    text: str = ""
    path: str = ""
    nr: int = 64
    nbeta: int = 256
    ntheta: int = 64
    N: int | None = None
    h_ray: float | None = None
    a: Profile = field(default_factory=Profile)
    k: dict = field(default_factory=dict)
    M: int | None = None
    source: SourceBlock | None = None
    source_tilde: SourceBlock | None = None
    tol: float = 1e-10
    max_iter: int = 200
    noise_std: float = 0.0
    command: str | None = None
    out: str | None = None
    seed: int = 0
    variant: str | None = None
    isotropic_data: bool = False
    mask: str = "all"
    levels: int | None = None

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    @property
    def modes(self) -> int:
        return self.N if self.N is not None else self.ntheta // 2 - 1

    def grid(self, level: int = 0) -> PolarGrid:
        f = 2**level
        return PolarGrid(self.nr * f, self.nbeta * f)

    def directions(self) -> DirectionGrid:
        return DirectionGrid(self.ntheta)

    def ray_step(self, grid: PolarGrid) -> float:
        if self.h_ray is None:
            return 0.5 / grid.nr
        return self.h_ray * self.nr / grid.nr

    def medium(self, grid: PolarGrid) -> MediumSpec:
        M = self.M if self.M is not None else max(list(self.k) + [1])
        kcoef = [self.k[n].evaluate(grid) if n in self.k else np.zeros(grid.shape)
                 for n in range(M + 1)]
        return MediumSpec(grid, self.a.evaluate(grid), kcoef)


def _parse_value(conv, text, line, key):
    try:
        return conv(text)
    except ValueError:
        raise ConfigError(f"cannot parse '{text}' as {conv.__name__}", line, key) from None


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def parse_config(text: str, path: str = "<string>") -> Config:
    """Parse configuration text; errors name the line and field."""
    cfg = Config(text=text, path=path)
    base = os.path.dirname(os.path.abspath(path)) if path != "<string>" else "."
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header '{line}'", lineno)
            section = line[1:-1].strip().lower()
            if section not in _SECTIONS:
                raise ConfigError(f"unknown section [{section}]", lineno)
            if section == "source" and cfg.source is None:
                cfg.source = SourceBlock()
            if section == "source_tilde" and cfg.source_tilde is None:
                cfg.source_tilde = SourceBlock()
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got '{line}'", lineno)
        if section is None:
            raise ConfigError("entry before any [section] header", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        lkey = key.lower()
        if section == "grid":
            if lkey not in _GRID_KEYS:
                raise ConfigError("unknown grid key", lineno, key)
            v = _parse_value(_GRID_KEYS[lkey], value, lineno, key)
            attr = {"nr": "nr", "nbeta": "nbeta", "ntheta": "ntheta", "n": "N", "h_ray": "h_ray"}[lkey]
            setattr(cfg, attr, v)
        elif section == "medium":
            if lkey == "a":
                cfg.a.terms.append(parse_primitive(value, lineno, key, base))
            elif re.fullmatch(r"k\d+", lkey):
                n = int(lkey[1:])
                cfg.k.setdefault(n, Profile()).terms.append(parse_primitive(value, lineno, key, base))
            elif lkey == "m":
                cfg.M = _parse_value(int, value, lineno, key)
            else:
                raise ConfigError("unknown medium key", lineno, key)
        elif section in ("source", "source_tilde"):
            blk = cfg.source if section == "source" else cfg.source_tilde
            if lkey == "f0":
                blk.f0.terms.append(parse_primitive(value, lineno, key, base))
            elif lkey == "f":
                if value.lower() not in ("none", "gradient", "perp_gradient", "explicit"):
                    raise ConfigError(f"F must be none, gradient, perp_gradient or explicit, "
                                      f"got '{value}'", lineno, key)
                blk.F_kind = value.lower()
            elif lkey in ("psi", "f1", "f2"):
                prof = {"psi": blk.psi, "f1": blk.F1, "f2": blk.F2}[lkey]
                prof.terms.append(parse_primitive(value, lineno, key, base))
            else:
                raise ConfigError("unknown source key", lineno, key)
        elif section == "solver":
            if lkey not in _SOLVER_KEYS:
                raise ConfigError("unknown solver key", lineno, key)
            setattr(cfg, lkey, _parse_value(_SOLVER_KEYS[lkey], value, lineno, key))
        elif section == "run":
            if lkey not in _RUN_KEYS:
                raise ConfigError("unknown run key", lineno, key)
            if lkey == "seed":
                cfg.seed = _parse_value(int, value, lineno, key)
            elif lkey == "levels":
                cfg.levels = _parse_value(int, value, lineno, key)
            elif lkey == "isotropic_data":
                cfg.isotropic_data = _parse_value(_bool, value, lineno, key)
            else:
                setattr(cfg, lkey, value)
    _validate(cfg)
    return cfg


def _validate(cfg: Config):
    if cfg.nr < 8:
        raise ConfigError(f"Nr must be >= 8, got {cfg.nr}", key="Nr")
    if cfg.nbeta < 8 or cfg.nbeta % 2:
        raise ConfigError(f"Nbeta must be even and >= 8, got {cfg.nbeta}", key="Nbeta")
    if cfg.ntheta < 8 or cfg.ntheta % 2:
        raise ConfigError(f"Ntheta must be even and >= 8, got {cfg.ntheta}", key="Ntheta")
    if cfg.N is not None and not 3 <= cfg.N <= cfg.ntheta // 2 - 1:
        raise ConfigError(f"N must lie in [3, Ntheta/2 - 1 = {cfg.ntheta // 2 - 1}], got {cfg.N}",
                          key="N")
    if cfg.h_ray is not None and cfg.h_ray <= 0:
        raise ConfigError(f"h_ray must be positive, got {cfg.h_ray:g}", key="h_ray")
    if cfg.M is not None:
        if cfg.M < 1:
            raise ConfigError(f"M must be >= 1, got {cfg.M}", key="M")
        extra = [n for n in cfg.k if n > cfg.M]
        if extra:
            raise ConfigError(f"kernel coefficient k{max(extra)} exceeds declared degree M={cfg.M}",
                              key=f"k{max(extra)}")
    if cfg.tol <= 0:
        raise ConfigError("tol must be positive", key="tol")
    if cfg.max_iter < 1:
        raise ConfigError("max_iter must be >= 1", key="max_iter")
    if cfg.noise_std < 0:
        raise ConfigError("noise_std must be non-negative", key="noise_std")
    if cfg.seed < 0 or cfg.seed >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer", key="seed")
    for name, blk in (("source", cfg.source), ("source_tilde", cfg.source_tilde)):
        if blk is None:
            continue
        if blk.F_kind in ("gradient", "perp_gradient") and not blk.psi:
            raise ConfigError(f"F = {blk.F_kind} needs psi lines", key=f"{name}.psi")
        if blk.F_kind == "explicit" and not (blk.F1 or blk.F2):
            raise ConfigError("F = explicit needs F1/F2 lines", key=f"{name}.F1")
    if cfg.mask != "all" and not re.fullmatch(r"annulus\(\s*[-+.\deE]+\s*,\s*[-+.\deE]+\s*\)", cfg.mask):
        raise ConfigError(f"mask must be 'all' or annulus(rmin, rmax), got '{cfg.mask}'", key="mask")


def load_config(path: str) -> Config:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path)


def mask_array(cfg: Config, grid: PolarGrid) -> np.ndarray:
    if cfg.mask == "all":
        return np.ones(grid.shape, dtype=bool)
    lo, hi = (float(v) for v in re.findall(r"[-+.\deE]+", cfg.mask[len("annulus"):]))
    r = np.abs(grid.z)
    return (r >= lo) & (r <= hi)
