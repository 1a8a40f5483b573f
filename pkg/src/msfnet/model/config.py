from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field

FUSION_MODES = ("MS", "MC")
SKIP_MODES = ("none", "image", "all")
SIGNAL_KINDS = ("DCT", "SB")
INIT_SCHEME = "uniform_fan_in/bias0/bn1-0"

# Table-3 style labels accepted on input
_SKIP_ALIASES = {"no": "none", "img": "image"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    fusion: str = "MS"
    signals: tuple[str, ...] = ("SB",)
    skip: str = "image"
    input_size: int = 256
    encoder_channels: tuple[int, ...] = (32, 64, 128, 256, 512)
    stream_out_channels: int = 32
    decoder_channels: tuple[int, ...] = (64, 32, 16, 2, 2)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "signals", tuple(self.signals))
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        object.__setattr__(self, "decoder_channels", tuple(int(c) for c in self.decoder_channels))
        skip = _SKIP_ALIASES.get(str(self.skip).lower(), str(self.skip).lower())
        object.__setattr__(self, "skip", skip)
        object.__setattr__(self, "fusion", str(self.fusion).upper())
        self.validate()

    def validate(self) -> None:
        if self.fusion not in FUSION_MODES:
            raise ConfigError(f"fusion must be one of {FUSION_MODES}, got {self.fusion!r}")
        if self.skip not in SKIP_MODES:
            raise ConfigError(f"skip must be one of {SKIP_MODES}, got {self.skip!r}")
        for s in self.signals:
            if s not in SIGNAL_KINDS:
                raise ConfigError(f"unknown signal {s!r}; expected a subset of {SIGNAL_KINDS}")
        if len(set(self.signals)) != len(self.signals):
            raise ConfigError(f"duplicate signals in {self.signals}")
        if len(self.encoder_channels) != 5 or any(c < 1 for c in self.encoder_channels):
            raise ConfigError(f"encoder_channels must be 5 positive widths, got {self.encoder_channels}")
        if len(self.decoder_channels) != 5 or any(c < 1 for c in self.decoder_channels):
            raise ConfigError(f"decoder_channels must be 5 positive widths, got {self.decoder_channels}")
        if self.stream_out_channels < 1:
            raise ConfigError("stream_out_channels must be positive")
        if self.input_size < 32 or self.input_size % 32:
            raise ConfigError(f"input_size must be a positive multiple of 32, got {self.input_size}")

    @property
    def num_streams(self) -> int:
        return 1 + len(self.signals) if self.fusion == "MS" else 1

    @property
    def stream_inputs(self) -> list[tuple[str, ...]]:
        """Input names consumed by each encoder stream, in stream order."""
        if self.fusion == "MS":
            return [("image",)] + [(s,) for s in self.signals]
        return [("image",) + self.signals]

    def stream_in_channels(self, index: int) -> int:
        return sum(3 if name == "image" else 1 for name in self.stream_inputs[index])

    @property
    def tapped_streams(self) -> list[int]:
        if self.skip == "none":
            return []
        if self.skip == "image":
            return [0]
        return list(range(self.num_streams))

    @property
    def decoder_in_channels(self) -> int:
        return self.stream_out_channels * self.num_streams

    @property
    def skip_channels(self) -> int:
        return self.encoder_channels[1] * len(self.tapped_streams)

    @property
    def decoder_layer5_in_channels(self) -> int:
        return self.decoder_channels[3] + self.skip_channels

    def topology(self) -> dict:
        return {
            "fusion": self.fusion,
            "signals": list(self.signals),
            "skip": self.skip,
            "encoder_channels": list(self.encoder_channels),
            "stream_out_channels": self.stream_out_channels,
            "decoder_channels": list(self.decoder_channels),
            "init": INIT_SCHEME,
        }

    def config_hash(self) -> int:
        """CRC32 of the canonical topology text; seed and input size do not enter it."""
        return zlib.crc32(canonical_json(self.topology()).encode("utf-8")) & 0xFFFFFFFF

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("signals", "encoder_channels", "decoder_channels"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def label(self) -> str:
        sig = "+".join(("RGB",) + self.signals)
        return f"{self.fusion}[{sig}] skip={self.skip}"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))
