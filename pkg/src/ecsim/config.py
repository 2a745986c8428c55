"""Spin-system configuration: boundary values in MHz / mT / degrees.

JSON layout::

    {
      "omega_I_MHz": -14.58,          # or "B0_mT": 343.7 for a proton
      "A_MHz": -29.06,
      "B_MHz": 6.45,
      "offset": "auto:2324",          # "auto:1314" or a number in MHz
      "tensor": {"principal_MHz": [-29, -91, -61],
                 "euler_deg": [0, 0, 0],
                 "field_dir": [1, 0, 0]}
    }

``A_MHz``/``B_MHz`` may be omitted when the tensor block carries a
``field_dir``; they are then computed from the tensor orientation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import (
    DOUBLETS,
    HyperfineTensor,
    SpinParams,
    hyperfine_from_orientation,
    proton_larmor_mhz,
    resonance_offset,
)
from .spincore import MHZ

DEFAULT_OFFSET = "auto:2324"


class ConfigError(ValueError):
    pass


def check_offset(offset):
    if isinstance(offset, str):
        if offset.startswith("auto:") and offset[5:] in DOUBLETS:
            return offset
        raise ConfigError(f"offset must be 'auto:2324', 'auto:1314' or a number in MHz, got {offset!r}")
    if isinstance(offset, bool) or not isinstance(offset, (int, float)) or not math.isfinite(offset):
        raise ConfigError(f"offset must be 'auto:2324', 'auto:1314' or a finite number, got {offset!r}")
    return float(offset)


@dataclass(frozen=True)
class TensorConfig:
    principal_MHz: tuple[float, float, float]
    euler_deg: tuple[float, float, float] = (0.0, 0.0, 0.0)
    field_dir: tuple[float, float, float] | None = None

    @property
    def tensor(self) -> HyperfineTensor:
        return HyperfineTensor(self.principal_MHz, tuple(math.radians(a) for a in self.euler_deg))


@dataclass(frozen=True)
class SystemConfig:
    omega_I_MHz: float
    A_MHz: float
    B_MHz: float
    offset: str | float = DEFAULT_OFFSET
    tensor: TensorConfig | None = None

    def __post_init__(self):
        for name in ("omega_I_MHz", "A_MHz", "B_MHz"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        object.__setattr__(self, "offset", check_offset(self.offset))

    def to_params(self) -> SpinParams:
        p = SpinParams.from_mhz(self.omega_I_MHz, self.A_MHz, self.B_MHz)
        if isinstance(self.offset, str):
            return p.with_offset(resonance_offset(p, self.offset[5:]))
        return p.with_offset(self.offset * MHZ)

    def resolved(self) -> dict:
        """Parameters after unit conversion, for run manifests."""
        p = self.to_params()
        out = {
            "input": {
                "omega_I_MHz": self.omega_I_MHz,
                "A_MHz": self.A_MHz,
                "B_MHz": self.B_MHz,
                "offset": self.offset,
            },
            "rad_per_ns": {
                "omega_S_offset": p.omega_S_offset,
                "omega_I": p.omega_I,
                "A": p.A,
                "B": p.B,
            },
            "B_sign_flipped": p.b_negative,
        }
        if self.tensor is not None:
            out["tensor"] = {
                "principal_MHz": list(self.tensor.principal_MHz),
                "euler_deg": list(self.tensor.euler_deg),
                "field_dir": None if self.tensor.field_dir is None else list(self.tensor.field_dir),
            }
        return out


def _triple(block, key, default=None):
    v = block.get(key, default)
    if v is None:
        return None
    if not isinstance(v, (list, tuple)) or len(v) != 3:
        raise ConfigError(f"tensor.{key} must be a list of three numbers")
    try:
        out = tuple(float(x) for x in v)
    except (TypeError, ValueError):
        raise ConfigError(f"tensor.{key} must be a list of three numbers") from None
    if not all(math.isfinite(x) for x in out):
        raise ConfigError(f"tensor.{key} must be finite")
    return out


_KNOWN_KEYS = {"omega_I_MHz", "B0_mT", "A_MHz", "B_MHz", "offset", "tensor"}


def config_from_dict(data: dict) -> SystemConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = sorted(set(data) - _KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
    tensor = None
    if "tensor" in data:
        block = data["tensor"]
        if not isinstance(block, dict):
            raise ConfigError("tensor must be an object")
        principal = _triple(block, "principal_MHz")
        if principal is None:
            raise ConfigError("tensor block needs principal_MHz")
        tensor = TensorConfig(principal, _triple(block, "euler_deg", (0.0, 0.0, 0.0)), _triple(block, "field_dir"))

    def number(key):
        v = data[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(v)

    if "omega_I_MHz" in data:
        omega_I = number("omega_I_MHz")
    elif "B0_mT" in data:
        omega_I = proton_larmor_mhz(number("B0_mT"))
    elif tensor is not None and not any(k in data for k in ("A_MHz", "B_MHz")):
        # scan-only configs need nothing but the tensor
        omega_I = math.nan
    else:
        raise ConfigError("configuration needs omega_I_MHz (or B0_mT)")

    if "A_MHz" in data or "B_MHz" in data:
        missing = [k for k in ("A_MHz", "B_MHz") if k not in data]
        if missing:
            raise ConfigError(f"missing key(s): {', '.join(missing)}")
        A, B = number("A_MHz"), number("B_MHz")
    elif tensor is not None and tensor.field_dir is not None:
        d = np.asarray(tensor.field_dir)
        A, B = hyperfine_from_orientation(tensor.tensor, d / np.linalg.norm(d))
    elif tensor is not None:
        A = B = math.nan
    else:
        raise ConfigError("configuration needs A_MHz and B_MHz (or a tensor with field_dir)")
    offset = data.get("offset", DEFAULT_OFFSET)
    return _build(omega_I, A, B, offset, tensor)


def _build(omega_I, A, B, offset, tensor):
    # NaN placeholders mark scan-only configs; they never reach a Hamiltonian
    cfg = object.__new__(SystemConfig)
    for k, v in (("omega_I_MHz", omega_I), ("A_MHz", A), ("B_MHz", B), ("offset", check_offset(offset)), ("tensor", tensor)):
        object.__setattr__(cfg, k, v)
    if all(math.isfinite(x) for x in (omega_I, A, B)):
        SystemConfig.__post_init__(cfg)
    return cfg


def has_hamiltonian(cfg: SystemConfig) -> bool:
    return all(math.isfinite(x) for x in (cfg.omega_I_MHz, cfg.A_MHz, cfg.B_MHz))


def load_config(path) -> SystemConfig:
    """Read a JSON configuration, or the system block of a pulse-program file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror or exc}") from None
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        raise ConfigError(f"{path}: not valid UTF-8") from None
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
        return config_from_dict(data)
    from .dsl import parse

    result = parse(text, origin=str(path))
    if result.system is None:
        msgs = "; ".join(str(d) for d in result.errors) or "no system block"
        raise ConfigError(msgs)
    return result.system
