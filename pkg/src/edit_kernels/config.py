"""Mechanism menu and per-run attention configuration."""

from __future__ import annotations

from dataclasses import dataclass, replace
import re

from .errors import ConfigError
from .mmedit import EtaMode

MECHANISMS = (
    "sdpa",
    "linear",
    "sana",
    "linfusion",
    "kvcomp",
    "edit",
    "joint",
    "joint-decomposed",
    "hybrid",
    "hybrid-exact",
)
MULTIMODAL = frozenset({"joint", "joint-decomposed", "hybrid", "hybrid-exact"})
DEFAULT_KV_FACTOR = 2

_KV_RE = re.compile(r"^kvcomp(?:[:(](\d+)\)?|(\d+))?$")


def parse_mechanism(text: str) -> tuple[str, int]:
    """``'kvcomp(3)'`` / ``'kvcomp:3'`` / ``'kvcomp3'`` -> ``('kvcomp', 3)``; others get factor 1."""
    text = text.strip().lower()
    m = _KV_RE.match(text)
    if m:
        k = int(m.group(1) or m.group(2) or DEFAULT_KV_FACTOR)
        if k < 1:
            raise ConfigError(f"kvcomp factor must be >= 1, got {k}")
        return "kvcomp", k
    if text not in MECHANISMS:
        raise ConfigError(f"unknown mechanism {text!r}; choose from {', '.join(MECHANISMS)}")
    return text, 1


def mechanism_label(name: str, kv_factor: int = 1) -> str:
    return f"kvcomp({kv_factor})" if name == "kvcomp" else name


@dataclass(frozen=True)
class AttentionConfig:
    mechanism: str = "edit"
    d: int = 64
    heads: int = 4
    height: int = 16
    width: int = 16
    n_prompt: int = 16
    kv_factor: int = DEFAULT_KV_FACTOR
    eta_mode: EtaMode = EtaMode.APPROX_TOKEN_COUNT
    strict: bool = False

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ConfigError(f"unknown mechanism {self.mechanism!r}")
        if self.d < 1 or self.heads < 1 or self.d % self.heads:
            raise ConfigError(f"d={self.d} not divisible by heads={self.heads}")
        if self.height < 0 or self.width < 0 or self.n_prompt < 0:
            raise ConfigError("grid extents and prompt length must be non-negative")
        if self.kv_factor < 1:
            raise ConfigError(f"kvcomp factor must be >= 1, got {self.kv_factor}")

    @classmethod
    def for_mechanism(cls, text: str, **kw) -> "AttentionConfig":
        name, k = parse_mechanism(text)
        if name == "kvcomp":
            kw.setdefault("kv_factor", k)
        if name == "hybrid-exact":
            kw.setdefault("eta_mode", EtaMode.EXACT_LINEAR)
        return cls(mechanism=name, **kw)

    @property
    def n_image(self) -> int:
        return self.height * self.width

    @property
    def head_dim(self) -> int:
        return self.d // self.heads

    @property
    def label(self) -> str:
        return mechanism_label(self.mechanism, self.kv_factor)

    @property
    def multimodal(self) -> bool:
        return self.mechanism in MULTIMODAL

    def with_grid(self, height: int, width: int) -> "AttentionConfig":
        return replace(self, height=height, width=width)


def parse_grid(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"\s*(\d+)\s*[xX]\s*(\d+)\s*", text)
    if not m:
        raise ConfigError(f"grid must look like HxW, got {text!r}")
    h, w = int(m.group(1)), int(m.group(2))
    if h < 1 or w < 1:
        raise ConfigError(f"grid extents must be positive, got {text!r}")
    return h, w
