"""Run configuration shared by the model, trainer, and CLI."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, asdict, replace

AGGR_MODES = ("sum", "mean", "max", "min")
FLOWS = ("source_to_target", "target_to_source")
NORMALIZATIONS = ("minmax", "standard", "robust", "quantile")
HIDDEN_CHOICES = (16, 32, 64, 128)
CHANNELS = ("T", "C", "L")


@dataclass(frozen=True)
class TrainConfig:
    hidden_dim: int = 64
    lr: float = 1e-3
    epochs: int = 100

    dropout_topology: float = 0.0
    dropout_centrality: float = 0.0
    dropout_attention: float = 0.0

    team_aggr: str = "mean"
    conv_aggr_topology: str = "sum"
    conv_aggr_centrality: str = "sum"
    # recorded and searchable for parity with the documented sweep space, but
    # the anchor-aligned contextual layers have no neighborhood reduction to
    # apply it to
    conv_aggr_contextual: str = "mean"

    flow_topology: str = "source_to_target"
    flow_centrality: str = "source_to_target"

    channels: tuple[str, ...] = CHANNELS

    swa_lr: float = 1e-3
    swa_start: float = 0.75
    swa_freq: int = 5
    use_swa: bool = True

    normalization: str = "standard"
    anchor_c: int = 24
    anchor_cutoff: int = 8
    anchor_resample: str = "never"  # or "epoch"
    contextual_weighted_distances: bool = False

    negative_slope: float = 0.2
    # clamp floor for channel-embedding normalization; the backward slope is
    # 1/eps_norm near zero vectors, so values much below 1e-3 destabilize
    # 32-bit training and make finite-difference checks unresolvable
    eps_norm: float = 1e-3
    # learnable GIN self-term offsets: on constant node features the entire
    # degree signal enters through eps * alpha_vv, so the topology stack
    # starts with a strong self offset; the centrality stack keeps the self
    # term small because its signal is the weighted neighbor sum
    eps_init_topology: float = 10.0
    eps_init_centrality: float = 0.0
    patience: int = 50
    val_fold: int = 0
    seed: int = 0

    def __post_init__(self):
        if not self.channels or any(c not in CHANNELS for c in self.channels):
            raise ValueError(f"channels must be a non-empty subset of {CHANNELS}")
        for name in ("team_aggr", "conv_aggr_topology", "conv_aggr_centrality",
                     "conv_aggr_contextual"):
            if getattr(self, name) not in AGGR_MODES:
                raise ValueError(f"{name} must be one of {AGGR_MODES}")
        for name in ("flow_topology", "flow_centrality"):
            if getattr(self, name) not in FLOWS:
                raise ValueError(f"{name} must be one of {FLOWS}")
        if self.anchor_resample not in ("never", "epoch"):
            raise ValueError("anchor_resample must be 'never' or 'epoch'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "channels" in d:
            d["channels"] = tuple(d["channels"])
        return cls(**d)

    def with_overrides(self, **kw) -> "TrainConfig":
        if "channels" in kw and not isinstance(kw["channels"], tuple):
            kw["channels"] = tuple(kw["channels"])
        return replace(self, **kw)

    def warn_if_outside_search_space(self) -> list[str]:
        """Flag values outside the documented sweep ranges (never fatal)."""
        notes = []
        if self.hidden_dim not in HIDDEN_CHOICES:
            notes.append(f"hidden_dim {self.hidden_dim} outside {HIDDEN_CHOICES}")
        for name in ("dropout_topology", "dropout_centrality", "dropout_attention"):
            v = getattr(self, name)
            if v != 0.0 and not 0.2 <= v <= 0.8:
                notes.append(f"{name} {v} outside [0.2, 0.8]")
        if not 20 <= self.epochs <= 100:
            notes.append(f"epochs {self.epochs} outside [20, 100]")
        for name in ("lr", "swa_lr"):
            v = getattr(self, name)
            if not 1e-5 <= v <= 1e-1:
                notes.append(f"{name} {v} outside [1e-5, 1e-1]")
        if not 0.6 <= self.swa_start <= 0.95:
            notes.append(f"swa_start {self.swa_start} outside [0.6, 0.95]")
        if not 1 <= self.swa_freq <= 20:
            notes.append(f"swa_freq {self.swa_freq} outside [1, 20]")
        if self.normalization not in NORMALIZATIONS:
            notes.append(f"normalization {self.normalization!r} outside {NORMALIZATIONS}")
        for n in notes:
            warnings.warn(f"config outside the documented search space: {n}",
                          stacklevel=2)
        return notes
