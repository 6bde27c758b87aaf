"""Flat INI run configuration covering synthesis, encoder and training settings."""

import configparser
from dataclasses import dataclass, fields, replace

from .synth import SynthSpec
from .trainer import EncoderConfig, TrainConfig

SECTION = "rspin"


@dataclass(frozen=True)
class RunConfig:
    # corpus
    n_utts: int = 20
    n_units: int = 20
    n_speakers: int = 4
    feat_dim: int = 16
    frames_per_utt: tuple = (80, 120)
    run_length: tuple = (2, 6)
    centroid_scale: float = 1.0
    speaker_offset_scale: float = 0.5
    noise_scale: float = 0.3
    transition_concentration: float = 0.3
    teacher_clusters: int = 50
    seed: int = 0
    # encoder
    n_layers: int = 2
    hidden_dim: int = 64
    proj_dim: int = 32
    nonlinearity: str = "tanh"
    # training; the schedule peak is sized for plain gradient descent
    total_updates: int = 500
    frames_per_batch: int = 256
    lr_peak: float = 2.0
    lr_floor: float = 1e-2
    warmup_fraction: float = 0.5
    lam: float = 5.0
    codebook_size: int = 32
    freeze_below: int = 0
    freeze_heads: bool = False
    temperature: float = 0.1
    sinkhorn_eps: float = 0.05
    sinkhorn_iters: int = 3

    def __post_init__(self):
        if self.n_utts < 1:
            raise ValueError("n_utts must be >= 1")
        if self.teacher_clusters < 2:
            raise ValueError("teacher_clusters must be >= 2")
        # Delegate the remaining invariants to the module configs.
        self.synth_spec()
        self.encoder_config()
        self.train_config()

    def synth_spec(self):
        return SynthSpec(**{f.name: getattr(self, f.name) for f in fields(SynthSpec)})

    def encoder_config(self, input_dim=None):
        return EncoderConfig(input_dim=input_dim or self.feat_dim, hidden_dim=self.hidden_dim,
                             n_layers=self.n_layers, proj_dim=self.proj_dim,
                             nonlinearity=self.nonlinearity)

    def train_config(self, aux_vocab=0):
        names = {f.name for f in fields(TrainConfig)} - {"aux_vocab"}
        return TrainConfig(aux_vocab=aux_vocab, **{n: getattr(self, n) for n in names})

    def with_overrides(self, **kwargs):
        """Apply non-``None`` overrides (command-line flags win over the file)."""
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})

    def to_ini(self):
        lines = [f"[{SECTION}]"]
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _coerce(name, raw, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return lowered in ("true", "1", "yes")
        if isinstance(default, tuple):
            lo, hi = (int(x) for x in raw.split(","))
            return (lo, hi)
        return type(default)(raw)
    except ValueError:
        raise ValueError(f"config key {name!r}: cannot parse {raw!r} as {type(default).__name__}") from None


def load_config(path=None):
    """Read a :class:`RunConfig` from an INI file; unknown keys are rejected."""
    if path is None:
        return RunConfig()
    parser = configparser.ConfigParser()
    with open(path, encoding="utf-8") as f:
        parser.read_file(f)
    known = {f.name: f.default for f in fields(RunConfig)}
    values = {}
    for section in parser.sections():
        if section != SECTION:
            raise ValueError(f"unknown config section [{section}]; use [{SECTION}]")
        for key, raw in parser.items(section):
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            values[key] = _coerce(key, raw, known[key])
    return RunConfig(**values)
