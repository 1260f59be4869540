"""TOML configuration for every tunable, as nested dataclasses.

Unknown keys are rejected; a dumped config loads back to the same settings.
"""
from __future__ import annotations

import dataclasses
import sys
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .adaptation import AdaptationConfig
from .errors import ConfigError
from .optimizer import AnnealSchedule
from .segmenter import ReferenceBackend
from .synth import Corruption, FPBlob, OracleBackend
from .tracker import TrackerConfig


@dataclass
class ReferenceFeatures:
    blur_sigmas: list[float] = field(default_factory=lambda: [2.0, 4.0])
    log_sigma: float = 1.0
    use_xy: bool = False


@dataclass
class OracleFeatures:
    """Oracle backend reading the sequence's dense labels/ directory."""

    jitter: float = 0.05
    fp_blobs: list[FPBlob] = field(default_factory=list)
    hole_pixels: int = 0
    erode_px: int = 0
    corruption_seed: int = 0

    def corruption(self) -> Corruption:
        return Corruption(list(self.fp_blobs), self.hole_pixels, [], self.erode_px, self.corruption_seed)


@dataclass
class SegmenterSection:
    backend: str = "reference"  # reference | oracle
    stride: int = 4
    k: int = 5
    initial_cap_per_label: int = 20000
    max_index_entries: int = 1_000_000
    reference: ReferenceFeatures = field(default_factory=ReferenceFeatures)
    oracle: OracleFeatures = field(default_factory=OracleFeatures)


@dataclass
class TrackerSection:
    lost_threshold: float = 0.30
    redetect_threshold: float = 0.45
    init_candidates: int = 50
    redetect_samples: int = 400
    min_support: int = 16
    flow: str = "auto"
    flow_window: int = 32
    strict_causal: bool = False


@dataclass
class EvalSection:
    log_sigma: float = 0.8
    hist_lo: float = 1.0
    hist_hi: float = 8.0
    hist_bins: int = 32
    ar_gap: int = 5


@dataclass
class OverlaySection:
    tint: list[int] = field(default_factory=lambda: [255, 40, 40])
    alpha: float = 0.45
    contour: list[int] = field(default_factory=lambda: [255, 255, 255])
    outline: list[int] = field(default_factory=lambda: [255, 220, 0])


@dataclass
class Config:
    seed: int = 0
    segmenter: SegmenterSection = field(default_factory=SegmenterSection)
    tracker: TrackerSection = field(default_factory=TrackerSection)
    optimizer: AnnealSchedule = field(default_factory=AnnealSchedule)
    adaptation: AdaptationConfig = field(default_factory=AdaptationConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    overlay: OverlaySection = field(default_factory=OverlaySection)

    def validate(self) -> "Config":
        s = self.segmenter
        if s.backend not in ("reference", "oracle"):
            raise ConfigError(f"unknown backend {s.backend!r}")
        if s.stride < 1 or s.k < 1:
            raise ConfigError("stride and k must be >= 1")
        if s.initial_cap_per_label < 1:
            raise ConfigError("initial_cap_per_label must be >= 1")
        if self.eval.hist_bins < 1 or not 0 < self.eval.hist_lo < self.eval.hist_hi:
            raise ConfigError("bad histogram range")
        if not 0 <= self.overlay.alpha <= 1:
            raise ConfigError("overlay alpha must lie in [0, 1]")
        self.tracker_config()
        return self

    def tracker_config(self) -> TrackerConfig:
        t = self.tracker
        try:
            return TrackerConfig(
                k=self.segmenter.k, lost_threshold=t.lost_threshold, redetect_threshold=t.redetect_threshold,
                init_candidates=t.init_candidates, redetect_samples=t.redetect_samples, min_support=t.min_support,
                flow=t.flow, flow_window=t.flow_window, initial_cap_per_label=self.segmenter.initial_cap_per_label,
                max_index_entries=self.segmenter.max_index_entries, strict_causal=t.strict_causal,
                schedule=self.optimizer, adaptation=self.adaptation,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def make_backend(self, seq=None):
        s = self.segmenter
        if s.backend == "reference":
            r = s.reference
            return ReferenceBackend(s.stride, tuple(r.blur_sigmas), r.log_sigma, r.use_xy)
        if seq is None:
            raise ConfigError("the oracle backend needs a sequence with dense labels")
        o = s.oracle
        return OracleBackend(seq.load_labels, s.stride, o.corruption(), o.jitter, self.seed)


# ---------------------------------------------------------------- (de)serialization

def _is_dc(tp) -> bool:
    return isinstance(tp, type) and dataclasses.is_dataclass(tp)


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, where)
    if _is_dc(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a table")
        return from_dict(tp, value, where)
    if origin in (list, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected an array")
        (arg, *_) = typing.get_args(tp) or (object,)
        return [_coerce(arg, v, f"{where}[{i}]") for i, v in enumerate(value)]
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def from_dict(cls, data: dict, where: str = "config"):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {k: _coerce(hints[k], v, f"{where}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def to_dict(obj) -> dict:
    """Plain dict of a config dataclass; None values are left out (TOML has no null)."""
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if v is None:
            continue
        if dataclasses.is_dataclass(v):
            v = to_dict(v)
        elif isinstance(v, (list, tuple)):
            v = [to_dict(x) if dataclasses.is_dataclass(x) else x for x in v]
        out[f.name] = v
    return out


def parse(text: str) -> Config:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    return from_dict(Config, data).validate()


def load(path: str | Path | None) -> Config:
    if path is None:
        return Config().validate()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    return parse(path.read_text())


def dumps(cfg: Config) -> str:
    return tomli_w.dumps(to_dict(cfg))


def _parse_scalar(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text  # bare string


def apply_overrides(cfg: Config, overrides: list[str]) -> Config:
    """Apply ``section.key=value`` strings (values in TOML syntax)."""
    data = to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        *path, last = key.strip().split(".")
        node = data
        for p in path:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r}: {p} is not a section")
        node[last] = _parse_scalar(value.strip())
    return from_dict(Config, data).validate()
