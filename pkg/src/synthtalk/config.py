"""Pipeline configuration: one YAML file drives every stage.

Defaults follow the published training recipe (swap probabilities 0.8,
contrastive temperature 0.1, window 8, 2048-ray batches, the staged
learning-rate schedules) with desk-scale step budgets. Configs round-trip
through YAML unchanged, and every field is range-checked on load.
"""

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .world import CorpusSpec


@dataclass
class LandmarkConfig:
    steps: int = 2000
    batch: int = 256
    lr: float = 1e-3
    weight_decay: float = 1e-5
    swap_prob: float = 0.8
    log_every: int = 50


@dataclass
class AudioConfig:
    steps: int = 2000
    batch: int = 128
    lr: float = 1e-3
    lr_final: float = 5e-6
    temperature: float = 0.1
    window: int = 16
    log_every: int = 50


@dataclass
class ExprConfig:
    steps: int = 1000
    batch: int = 64
    lr: float = 1e-3
    weight_decay: float = 1e-5
    window: int = 8
    swap_prob: float = 0.8
    dropout: float = 0.2
    log_every: int = 25


@dataclass
class NerfConfig:
    steps: int = 20000
    rays_per_batch: int = 2048
    n_coarse: int = 64
    n_fine: int = 64
    lr: float = 5e-4
    lr_final: float = 5e-5
    resolution: int = 64
    identity: int = 0
    heldout_every: int = 10
    max_train_frames: int = 240
    cond_dim: int = 128
    finetune_audio: bool = False
    finetune_audio_lr: float = 5e-6
    log_every: int = 200


@dataclass
class EvalConfig:
    # None disables the corresponding CI threshold (exit code 2 on violation).
    psnr_min: float | None = None
    ssim_min: float | None = None


@dataclass
class PipelineConfig:
    seed: int = 0
    out: str = "runs/demo"
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    landmark: LandmarkConfig = field(default_factory=LandmarkConfig)
    audio: AudioConfig = field(default_factory=AudioConfig)
    expr: ExprConfig = field(default_factory=ExprConfig)
    nerf: NerfConfig = field(default_factory=NerfConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self):
        c = self.corpus  # CorpusSpec validates itself in __post_init__
        for name, cfg in (("landmark", self.landmark), ("audio", self.audio),
                          ("expr", self.expr), ("nerf", self.nerf)):
            if cfg.steps < 1:
                raise ValueError(f"{name}.steps must be >= 1")
            if getattr(cfg, "batch", 1) < 1:
                raise ValueError(f"{name}.batch must be >= 1")
            if getattr(cfg, "lr") <= 0:
                raise ValueError(f"{name}.lr must be > 0")
        for name, p in (("landmark.swap_prob", self.landmark.swap_prob),
                        ("expr.swap_prob", self.expr.swap_prob),
                        ("expr.dropout", self.expr.dropout)):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.audio.temperature <= 0:
            raise ValueError("audio.temperature must be > 0")
        if self.audio.window < 2 or self.audio.window > c.frames_per_video:
            raise ValueError("audio.window must be in [2, frames_per_video]")
        if self.expr.window < 2:
            raise ValueError("expr.window must be >= 2")
        if self.nerf.resolution < 8:
            raise ValueError("nerf.resolution must be >= 8")
        if self.nerf.n_coarse < 2 or self.nerf.n_fine < 1:
            raise ValueError("nerf sample counts must be >= 2 / >= 1")
        if not 0 <= self.nerf.identity < c.identities:
            raise ValueError("nerf.identity out of range")
        if self.nerf.rays_per_batch < 1:
            raise ValueError("nerf.rays_per_batch must be >= 1")
        return self


def to_dict(cfg: PipelineConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["corpus"]["emotions"] = list(d["corpus"]["emotions"])
    return d


def from_dict(d: dict) -> PipelineConfig:
    d = dict(d)
    kwargs = {}
    if "seed" in d:
        kwargs["seed"] = int(d["seed"])
    if "out" in d:
        kwargs["out"] = str(d["out"])
    sections = {"corpus": CorpusSpec, "landmark": LandmarkConfig, "audio": AudioConfig,
                "expr": ExprConfig, "nerf": NerfConfig, "eval": EvalConfig}
    for name, cls in sections.items():
        if name in d and d[name] is not None:
            section = dict(d[name])
            if name == "corpus" and "emotions" in section:
                section["emotions"] = tuple(section["emotions"])
            known = {f.name for f in dataclasses.fields(cls)}
            unknown = set(section) - known
            if unknown:
                raise ValueError(f"unknown {name} config keys: {sorted(unknown)}")
            kwargs[name] = cls(**section)
    unknown_top = set(d) - set(sections) - {"seed", "out"}
    if unknown_top:
        raise ValueError(f"unknown config sections: {sorted(unknown_top)}")
    return PipelineConfig(**kwargs).validate()


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    return from_dict(data)


def save_config(cfg: PipelineConfig, path):
    with open(path, "w") as fh:
        yaml.safe_dump(to_dict(cfg), fh, sort_keys=True)


DEFAULTS_YAML = """\
# synthtalk pipeline configuration (defaults shown)
seed: 0
out: runs/demo            # working directory for corpus, checkpoints, renders

corpus:
  identities: 3
  sentences: 3            # per identity; each sentence -> one 2-emotion video pair
  val_sentences: 1        # last sentences per identity held out of all training
  frames_per_video: 110
  duplicate_fraction: 0.15  # tempo warp of the second rendition (frame repeats)
  emotions: [neutral, happy, sad, angry]

landmark:
  steps: 2000
  batch: 256
  lr: 0.001
  weight_decay: 1.0e-05
  swap_prob: 0.8          # probability of exchanging mouth embeddings per pair
  log_every: 50

audio:
  steps: 2000
  batch: 128
  lr: 0.001
  lr_final: 5.0e-06       # exponential decay target over the step budget
  temperature: 0.1        # contrastive similarity temperature
  window: 16              # audio context frames per sample
  log_every: 50

expr:
  steps: 1000
  batch: 64
  lr: 0.001
  weight_decay: 1.0e-05
  window: 8               # frames per transformer window
  swap_prob: 0.8          # probability of exchanging expression features per window pair
  dropout: 0.2
  log_every: 25

nerf:
  steps: 20000
  rays_per_batch: 2048
  n_coarse: 64
  n_fine: 64
  lr: 0.0005
  lr_final: 5.0e-05
  resolution: 64
  identity: 0             # the radiance field is trained per identity
  heldout_every: 10       # every k-th frame excluded from training, used for eval
  max_train_frames: 240
  cond_dim: 128           # width of the concatenated audio+expression conditioning
  finetune_audio: false   # propagate gradients into the audio encoder
  finetune_audio_lr: 5.0e-06
  log_every: 200

eval:
  psnr_min: null          # set to gate `synthtalk eval` with exit code 2
  ssim_min: null
"""
