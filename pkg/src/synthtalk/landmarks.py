"""Landmark autoencoder that separates mouth motion from eye-nose motion.

A frame of 51 normalized landmarks (31 eye-nose + 20 mouth points) is
encoded into two 64-wide embeddings. Training samples frame pairs from the
same video and, with probability ``swap_prob``, exchanges the two frames'
mouth embeddings before decoding; the reconstruction target then carries
the swapped-in mouth points. That forces the mouth embedding to carry
mouth geometry only, and the eye-nose embedding everything else.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from . import train_utils as tu

FRAME_DIM = 102
EYE_NOSE_DIM = 62
MOUTH_DIM = 40
EMBED_DIM = 64


def _check_frames(x: torch.Tensor, name: str):
    if x.shape[-1] != FRAME_DIM:
        raise ValueError(f"{name} must have {FRAME_DIM} coordinates, got {x.shape[-1]}")
    if not torch.isfinite(x).all():
        raise ValueError(f"{name} contains non-finite coordinates")


def split_frame(frame):
    """(eye_nose, mouth) views of a frame batch."""
    return frame[..., :EYE_NOSE_DIM], frame[..., EYE_NOSE_DIM:]


class LandmarkCodec(nn.Module):
    """Four affine layers each way, hidden 256/256/128, leaky rectifiers."""

    def __init__(self):
        super().__init__()
        act = nn.LeakyReLU(0.02)
        self.encoder = nn.Sequential(
            nn.Linear(FRAME_DIM, 256), act,
            nn.Linear(256, 256), act,
            nn.Linear(256, 128), act,
            nn.Linear(128, 2 * EMBED_DIM),
        )
        self.decoder = nn.Sequential(
            nn.Linear(2 * EMBED_DIM, 128), act,
            nn.Linear(128, 256), act,
            nn.Linear(256, 256), act,
            nn.Linear(256, FRAME_DIM),
        )

    def encode(self, frame: torch.Tensor):
        z = self.encoder(frame)
        return z[..., :EMBED_DIM], z[..., EMBED_DIM:]

    def decode(self, eye_nose_embed: torch.Tensor, mouth_embed: torch.Tensor):
        return self.decoder(torch.cat([eye_nose_embed, mouth_embed], dim=-1))


def encode_landmarks(codec: LandmarkCodec, frame):
    """Embed a frame (or batch) into (eye_nose_embed, mouth_embed).

    Accepts numpy or torch input and returns the matching kind; inference
    runs without gradients and is deterministic.
    """
    if isinstance(frame, np.ndarray):
        x = torch.as_tensor(frame, dtype=torch.float32)
        _check_frames(x, "landmark frame")
        with torch.no_grad():
            ef, em = codec.encode(x)
        return ef.numpy(), em.numpy()
    _check_frames(frame, "landmark frame")
    return codec.encode(frame)


def decode_landmarks(codec: LandmarkCodec, eye_nose_embed, mouth_embed):
    """Decode two 64-wide embeddings back to a 102-coordinate frame."""
    is_np = isinstance(eye_nose_embed, np.ndarray)
    ef = torch.as_tensor(eye_nose_embed, dtype=torch.float32) if is_np else eye_nose_embed
    em = torch.as_tensor(mouth_embed, dtype=torch.float32) if is_np else mouth_embed
    if ef.shape[-1] != EMBED_DIM or em.shape[-1] != EMBED_DIM:
        raise ValueError(f"embeddings must be {EMBED_DIM}-wide, got "
                         f"{ef.shape[-1]} and {em.shape[-1]}")
    if not (torch.isfinite(ef).all() and torch.isfinite(em).all()):
        raise ValueError("embeddings contain non-finite values")
    if is_np:
        with torch.no_grad():
            return codec.decode(ef, em).numpy()
    return codec.decode(ef, em)


def swap_mouth_targets(frame_a, frame_b, swap: bool):
    """Reconstruction targets for a frame pair under an optional mouth swap.

    With ``swap`` the first target keeps A's eye-nose points but takes B's
    mouth points (and symmetrically for the second); without it the
    targets are the inputs. Applying the same swap twice restores the
    original pairing.
    """
    if isinstance(frame_a, torch.Tensor):
        if not swap:
            return frame_a.clone(), frame_b.clone()
        target_ab = torch.cat([frame_a[..., :EYE_NOSE_DIM], frame_b[..., EYE_NOSE_DIM:]], dim=-1)
        target_ba = torch.cat([frame_b[..., :EYE_NOSE_DIM], frame_a[..., EYE_NOSE_DIM:]], dim=-1)
        return target_ab, target_ba
    if not swap:
        return np.array(frame_a, copy=True), np.array(frame_b, copy=True)
    target_ab = np.concatenate([frame_a[..., :EYE_NOSE_DIM], frame_b[..., EYE_NOSE_DIM:]], axis=-1)
    target_ba = np.concatenate([frame_b[..., :EYE_NOSE_DIM], frame_a[..., EYE_NOSE_DIM:]], axis=-1)
    return target_ab, target_ba


def landmark_recon_loss(pred_ab, pred_ba, target_ab, target_ba) -> torch.Tensor:
    """Mean over the batch of the summed per-coordinate absolute errors
    of both reconstruction directions."""
    pred_ab, pred_ba, target_ab, target_ba = [
        torch.as_tensor(np.asarray(t), dtype=torch.float64) if isinstance(t, np.ndarray) else t
        for t in (pred_ab, pred_ba, target_ab, target_ba)]
    per_pair = (pred_ab - target_ab).abs().sum(dim=-1) + (pred_ba - target_ba).abs().sum(dim=-1)
    return per_pair.mean()


@dataclass
class LandmarkTrainResult:
    codec: LandmarkCodec
    log: tu.TrainLog
    heldout_loss: float
    optimizer_tensors: dict
    steps_done: int


def _video_frame_tensor(corpus, video_ids):
    frames = {vid: torch.tensor(corpus.landmarks(vid), dtype=torch.float32)
              for vid in video_ids}
    for vid, t in frames.items():
        if t.shape[0] < 2:
            raise ValueError(f"video {vid} has fewer than 2 frames")
    return frames


def sample_frame_pairs(frames: dict, batch: int, rng) -> tuple:
    """Pick (frame A, frame B) pairs, both from the same randomly chosen video."""
    vids = sorted(frames)
    choice = rng.integers(0, len(vids), size=batch)
    a_rows, b_rows = [], []
    for k in choice:
        t = frames[vids[k]]
        i = int(rng.integers(0, t.shape[0]))
        j = int(rng.integers(0, t.shape[0] - 1))
        if j >= i:
            j += 1
        a_rows.append(t[i])
        b_rows.append(t[j])
    return torch.stack(a_rows), torch.stack(b_rows)


def _pair_loss(codec, a, b, swap: bool):
    ef_a, em_a = codec.encode(a)
    ef_b, em_b = codec.encode(b)
    if swap:
        pred_ab = codec.decode(ef_a, em_b)
        pred_ba = codec.decode(ef_b, em_a)
    else:
        pred_ab = codec.decode(ef_a, em_a)
        pred_ba = codec.decode(ef_b, em_b)
    target_ab, target_ba = swap_mouth_targets(a, b, swap)
    return landmark_recon_loss(pred_ab, pred_ba, target_ab, target_ba)


def train_landmark_codec(corpus, cfg, seed: int, resume=None) -> LandmarkTrainResult:
    """Train the codec on the corpus' train split.

    Frame pairs are sampled from within single videos; the mouth-embedding
    swap is one joint Bernoulli(swap_prob) draw per pair. Optimized with
    Adam and the configured weight decay. Deterministic given the seed;
    pass a (tensors, meta) checkpoint payload as ``resume`` to continue a
    partial run bit-exactly.
    """
    frames = _video_frame_tensor(corpus, corpus.video_ids(split="train"))
    tu.seed_torch(seed, "landmark-init")
    codec = LandmarkCodec()
    opt = torch.optim.Adam(codec.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    start = 0
    if resume is not None:
        tensors, meta = resume
        codec.load_state_dict({k[len("model."):]: torch.from_numpy(np.asarray(v).copy())
                               for k, v in tensors.items() if k.startswith("model.")})
        tu.load_optimizer_tensors(opt, tensors)
        start = int(meta["step"])
    log = tu.TrainLog()
    for step in range(start, cfg.steps):
        rng = tu.step_rng(seed, "landmark", step)
        a, b = sample_frame_pairs(frames, cfg.batch, rng)
        swap = bool(rng.random() < cfg.swap_prob)
        loss = _pair_loss(codec, a, b, swap)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            log.add(step, loss.item())
    heldout = heldout_recon_loss(codec, corpus, seed)
    return LandmarkTrainResult(codec, log, heldout, tu.optimizer_tensors(opt), cfg.steps)


def heldout_recon_loss(codec: LandmarkCodec, corpus, seed: int, n_pairs: int = 512) -> float:
    """Unswapped + swapped reconstruction loss on the val split."""
    val_ids = corpus.video_ids(split="val")
    if not val_ids:
        return float("nan")
    frames = _video_frame_tensor(corpus, val_ids)
    rng = tu.step_rng(seed, "landmark-heldout")
    a, b = sample_frame_pairs(frames, n_pairs, rng)
    with torch.no_grad():
        loss = 0.5 * (_pair_loss(codec, a, b, True) + _pair_loss(codec, a, b, False))
    return float(loss.item())


def codec_tensors(result: LandmarkTrainResult) -> tuple[dict, dict]:
    """Checkpoint payload (tensors, meta) for a trained codec."""
    tensors = {f"model.{k}": v.detach().cpu().numpy()
               for k, v in result.codec.state_dict().items()}
    tensors.update(result.optimizer_tensors)
    meta = {"step": result.steps_done, "heldout_loss": result.heldout_loss}
    return tensors, meta


def codec_from_tensors(tensors: dict) -> LandmarkCodec:
    codec = LandmarkCodec()
    codec.load_state_dict({k[len("model."):]: torch.from_numpy(np.asarray(v).copy())
                           for k, v in tensors.items() if k.startswith("model.")})
    codec.eval()
    return codec


def mouth_embedding_tracks(codec: LandmarkCodec, corpus, video_ids) -> dict:
    """Frozen per-frame mouth embeddings for each requested video."""
    out = {}
    with torch.no_grad():
        for vid in video_ids:
            frames = torch.tensor(corpus.landmarks(vid), dtype=torch.float32)
            _, em = codec.encode(frames)
            out[vid] = em.numpy()
    return out
