"""Contrastive audio encoder aligned to frozen mouth embeddings.

A small convolution-over-time network maps a (window, feature) block of
per-frame audio features to a 64-wide embedding. Training pulls each
window's embedding toward the mouth embedding of its center frame and
pushes it from a negative window drawn from a different video of the same
identity, using a two-term softmax over temperature-scaled cosine
similarities.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import train_utils as tu
from .world import AUDIO_FEATURE_DIM

EMBED_DIM = 64


class AudioEncoder(nn.Module):
    """Four stride-2 temporal convolutions, then two affine layers."""

    def __init__(self, window: int = 16, feature_dim: int = AUDIO_FEATURE_DIM):
        super().__init__()
        if window < 2:
            raise ValueError("window must be >= 2")
        self.window = window
        self.feature_dim = feature_dim
        act = nn.LeakyReLU(0.02)
        self.conv = nn.Sequential(
            nn.Conv1d(feature_dim, 32, 3, stride=2, padding=1), act,
            nn.Conv1d(32, 64, 3, stride=2, padding=1), act,
            nn.Conv1d(64, 64, 3, stride=2, padding=1), act,
            nn.Conv1d(64, 64, 3, stride=2, padding=1), act,
        )
        reduced = window
        for _ in range(4):
            reduced = (reduced + 1) // 2
        self.head = nn.Sequential(
            nn.Linear(64 * reduced, 64), act,
            nn.Linear(64, EMBED_DIM),
        )

    def forward(self, window: torch.Tensor) -> torch.Tensor:
        h = self.conv(window.transpose(-1, -2))
        return self.head(h.flatten(start_dim=-2))


def encode_audio(encoder: AudioEncoder, window):
    """Embed one (window, features) block or a batch of them."""
    is_np = isinstance(window, np.ndarray)
    x = torch.as_tensor(window, dtype=torch.float32) if is_np else window
    single = x.dim() == 2
    if single:
        x = x[None]
    if x.shape[-2] != encoder.window or x.shape[-1] != encoder.feature_dim:
        raise ValueError(f"window shape {tuple(x.shape[-2:])} does not match encoder "
                         f"({encoder.window}, {encoder.feature_dim})")
    if is_np:
        with torch.no_grad():
            out = encoder(x)
        out = out.numpy()
    else:
        out = encoder(x)
    return out[0] if single else out


def cosine_similarity_scaled(x, y, tau: float):
    """Inner product over the product of norms, divided by the temperature."""
    if tau <= 0:
        raise ValueError("temperature must be positive")
    xt = torch.as_tensor(x, dtype=torch.float64) if not isinstance(x, torch.Tensor) else x
    yt = torch.as_tensor(y, dtype=torch.float64) if not isinstance(y, torch.Tensor) else y
    nx = torch.linalg.vector_norm(xt, dim=-1)
    ny = torch.linalg.vector_norm(yt, dim=-1)
    if (nx == 0).any() or (ny == 0).any():
        raise ValueError("cosine similarity undefined for zero vectors")
    sim = (xt * yt).sum(dim=-1) / (tau * nx * ny)
    if not isinstance(x, torch.Tensor):
        return sim.item() if sim.dim() == 0 else sim.numpy()
    return sim


def info_nce_loss(pos_sims, neg_sims):
    """Mean over tuples of -log(exp(d+) / (exp(d+) + exp(d-))).

    Computed as softplus(d- minus d+), which is the same quantity in a
    numerically stable form.
    """
    pos = torch.as_tensor(pos_sims, dtype=torch.float64) if not isinstance(pos_sims, torch.Tensor) else pos_sims
    neg = torch.as_tensor(neg_sims, dtype=torch.float64) if not isinstance(neg_sims, torch.Tensor) else neg_sims
    if pos.numel() == 0 or neg.numel() == 0:
        raise ValueError("similarity lists must be nonempty")
    if pos.shape != neg.shape:
        raise ValueError(f"positive/negative lists differ in shape: {pos.shape} vs {neg.shape}")
    loss = F.softplus(neg - pos).mean()
    if not isinstance(pos_sims, torch.Tensor):
        return float(loss.item())
    return loss


def extract_window(features: np.ndarray, center: int, window: int) -> np.ndarray:
    """Window of rows centered on a frame, edges clamped."""
    idx = np.clip(np.arange(center - window // 2, center - window // 2 + window),
                  0, features.shape[0] - 1)
    return features[idx]


@dataclass
class ContrastiveIndex:
    """Mining view over a corpus with frozen mouth-embedding tracks."""

    corpus: object
    mouth_tracks: dict
    window: int
    video_ids: list

    def __post_init__(self):
        by_identity: dict[int, list[str]] = {}
        for vid in self.video_ids:
            by_identity.setdefault(self.corpus.videos[vid].identity, []).append(vid)
        for ident, vids in sorted(by_identity.items()):
            if len(vids) < 2:
                raise ValueError(f"identity {ident} has a single video; "
                                 "negative mining needs a different video")
        self.by_identity = {k: sorted(v) for k, v in by_identity.items()}


def mine_contrastive_batch(index: ContrastiveIndex, batch_size: int, seed: int):
    """Sample (positive window, mouth embedding, negative window) tuples.

    The positive window is centered on the frame whose mouth embedding is
    the anchor; the negative window is drawn uniformly from a different
    video of the same identity.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = tu.step_rng(seed, "mine")
    corpus, window = index.corpus, index.window
    pos, anchors, neg = [], [], []
    vids = index.video_ids
    for _ in range(batch_size):
        vid = vids[int(rng.integers(0, len(vids)))]
        rec = corpus.videos[vid]
        frame = int(rng.integers(0, rec.n_frames))
        feats = corpus.audio(vid)
        pos.append(extract_window(feats, frame, window))
        anchors.append(index.mouth_tracks[vid][frame])
        others = [v for v in index.by_identity[rec.identity] if v != vid]
        nvid = others[int(rng.integers(0, len(others)))]
        nfeats = corpus.audio(nvid)
        nframe = int(rng.integers(0, corpus.videos[nvid].n_frames))
        neg.append(extract_window(nfeats, nframe, window))
    return (np.stack(pos).astype(np.float32),
            np.stack(anchors).astype(np.float32),
            np.stack(neg).astype(np.float32))


@dataclass
class AudioTrainResult:
    encoder: AudioEncoder
    log: tu.TrainLog
    optimizer_tensors: dict
    steps_done: int


def train_audio_encoder(corpus, mouth_tracks: dict, cfg, seed: int, resume=None) -> AudioTrainResult:
    """Contrastive training against frozen mouth embeddings.

    The landmark codec stays frozen (its embeddings arrive precomputed in
    ``mouth_tracks``). Learning rate decays exponentially from cfg.lr to
    cfg.lr_final across the step budget.
    """
    index = ContrastiveIndex(corpus, mouth_tracks, cfg.window,
                             corpus.video_ids(split="train"))
    tu.seed_torch(seed, "audio-init")
    encoder = AudioEncoder(window=cfg.window)
    opt = torch.optim.Adam(encoder.parameters(), lr=cfg.lr)
    start = 0
    if resume is not None:
        tensors, meta = resume
        encoder.load_state_dict({k[len("model."):]: torch.from_numpy(np.asarray(v).copy())
                                 for k, v in tensors.items() if k.startswith("model.")})
        tu.load_optimizer_tensors(opt, tensors)
        start = int(meta["step"])
    log = tu.TrainLog()
    for step in range(start, cfg.steps):
        pos_np, anchor_np, neg_np = mine_contrastive_batch(
            index, cfg.batch, tu.derived_seed(seed, "audio", step))
        pos = torch.from_numpy(pos_np)
        neg = torch.from_numpy(neg_np)
        anchor = torch.from_numpy(anchor_np)
        e_pos = encoder(pos)
        e_neg = encoder(neg)
        d_pos = cosine_similarity_scaled(e_pos, anchor, cfg.temperature)
        d_neg = cosine_similarity_scaled(e_neg, anchor, cfg.temperature)
        loss = info_nce_loss(d_pos, d_neg)
        tu.set_lr(opt, tu.exp_decay_lr(cfg.lr, cfg.lr_final, step, cfg.steps))
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            log.add(step, loss.item())
    return AudioTrainResult(encoder, log, tu.optimizer_tensors(opt), cfg.steps)


def audio_embedding_track(encoder: AudioEncoder, features: np.ndarray) -> np.ndarray:
    """Per-frame audio embeddings for a whole video."""
    windows = np.stack([extract_window(features, t, encoder.window)
                        for t in range(features.shape[0])])
    with torch.no_grad():
        out = encoder(torch.as_tensor(windows, dtype=torch.float32))
    return out.numpy()


def encoder_tensors(result: AudioTrainResult) -> tuple[dict, dict]:
    tensors = {f"model.{k}": v.detach().cpu().numpy()
               for k, v in result.encoder.state_dict().items()}
    tensors.update(result.optimizer_tensors)
    return tensors, {"step": result.steps_done}


def encoder_from_tensors(tensors: dict, window: int = 16) -> AudioEncoder:
    enc = AudioEncoder(window=window)
    enc.load_state_dict({k[len("model."):]: torch.from_numpy(np.asarray(v).copy())
                         for k, v in tensors.items() if k.startswith("model.")})
    enc.eval()
    return enc
