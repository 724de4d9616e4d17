"""Transformer autoencoder splitting emotion features into two streams.

Per-frame emotion features (2048-wide) from two time-aligned renditions of
the same utterance are encoded window-by-window; each frame's encoding is
split into a speech-motion half and an expression half. During training
the expression halves of the two renditions are exchanged with probability
``swap_prob``; the autoregressive decoder must then reconstruct the
rendition the expression features came from (the aligned counterpart
supplies the matching speech content). One model is trained per identity.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from . import train_utils as tu
from .seq_align import dtw_align
from .world import EMOTION_FEATURE_DIM

HALF_DIM = 64
D_MODEL = 128


def sinusoidal_positions(length: int, dim: int = D_MODEL) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float32)[:, None]
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float32) * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)
    return pe


class ExprTransformer(nn.Module):
    """3-layer, 8-head encoder/decoder pair around a 128-wide bottleneck."""

    def __init__(self, feature_dim: int = EMOTION_FEATURE_DIM, window: int = 8,
                 dropout: float = 0.2):
        super().__init__()
        self.feature_dim = feature_dim
        self.window = window
        act = nn.LeakyReLU(0.02)
        self.in_proj = nn.Sequential(
            nn.Linear(feature_dim, 512), act, nn.Linear(512, D_MODEL))
        self.out_proj = nn.Sequential(
            nn.Linear(D_MODEL, 512), act, nn.Linear(512, feature_dim))
        enc_layer = nn.TransformerEncoderLayer(
            D_MODEL, nhead=8, dim_feedforward=512, dropout=dropout, batch_first=True)
        dec_layer = nn.TransformerDecoderLayer(
            D_MODEL, nhead=8, dim_feedforward=512, dropout=dropout, batch_first=True)
        self.encoder = nn.TransformerEncoder(enc_layer, num_layers=3)
        self.decoder = nn.TransformerDecoder(dec_layer, num_layers=3)
        self.start_token = nn.Parameter(torch.zeros(D_MODEL))
        self.end_token = nn.Parameter(torch.zeros(D_MODEL))
        nn.init.normal_(self.start_token, std=0.02)
        nn.init.normal_(self.end_token, std=0.02)
        self.register_buffer("positions", sinusoidal_positions(4 * window + 4), persistent=False)

    # -- encoder -----------------------------------------------------------

    def encode_window(self, window: torch.Tensor):
        """(B, w, feature_dim) -> speech half and expression half, each (B, w, 64)."""
        if window.shape[-2] != self.window:
            raise ValueError(f"window length {window.shape[-2]} != {self.window}")
        if window.shape[-1] != self.feature_dim:
            raise ValueError(f"feature width {window.shape[-1]} != {self.feature_dim}")
        h = self.in_proj(window) + self.positions[None, :self.window, :]
        out = self.encoder(h)
        return out[..., :HALF_DIM], out[..., HALF_DIM:]

    # -- decoder -----------------------------------------------------------

    def _masks(self, tgt_len: int, mem_len: int):
        tgt_mask = torch.triu(torch.full((tgt_len, tgt_len), float("-inf")), diagonal=1)
        # decoder position t may read conditioning frames <= t only
        i = torch.arange(tgt_len)[:, None]
        j = torch.arange(mem_len)[None, :]
        mem_mask = torch.where(j <= i, 0.0, float("-inf"))
        return tgt_mask, mem_mask

    def decode_teacher_forced(self, speech_feats, expr_feats, teacher: torch.Tensor):
        """Training-time decode with the target sequence shifted right.

        Input tokens are [start, f_0 .. f_{w-1}, end]; outputs at the first
        w positions are the frame predictions (the rest are stripped), so
        prediction t sees conditioning <= t and target frames < t.
        """
        memory = torch.cat([speech_feats, expr_feats], dim=-1)
        b, w, _ = memory.shape
        emb = self.in_proj(teacher)
        tokens = torch.cat([
            self.start_token.expand(b, 1, D_MODEL), emb,
            self.end_token.expand(b, 1, D_MODEL)], dim=1)
        tokens = tokens + self.positions[None, :w + 2, :]
        tgt_mask, mem_mask = self._masks(w + 2, w)
        out = self.decoder(tokens, memory, tgt_mask=tgt_mask, memory_mask=mem_mask)
        return self.out_proj(out[:, :w, :])

    def generate(self, speech_feats, expr_feats) -> torch.Tensor:
        """Free-running autoregressive reconstruction, frame by frame."""
        memory = torch.cat([speech_feats, expr_feats], dim=-1)
        b, w, _ = memory.shape
        tokens = self.start_token.expand(b, 1, D_MODEL)
        frames = []
        for t in range(w):
            tgt = tokens + self.positions[None, :t + 1, :]
            tgt_mask, mem_mask = self._masks(t + 1, w)
            out = self.decoder(tgt, memory, tgt_mask=tgt_mask, memory_mask=mem_mask)
            frame = self.out_proj(out[:, -1, :])
            frames.append(frame)
            if t + 1 < w:
                tokens = torch.cat([tokens, self.in_proj(frame)[:, None, :]], dim=1)
        return torch.stack(frames, dim=1)


def encode_expression(model: ExprTransformer, window):
    """Split a window of emotion features into (speech, expression) halves."""
    is_np = isinstance(window, np.ndarray)
    x = torch.as_tensor(window, dtype=torch.float32) if is_np else window
    single = x.dim() == 2
    if single:
        x = x[None]
    if is_np:
        model.eval()
        with torch.no_grad():
            e_l, e_e = model.encode_window(x)
        e_l, e_e = e_l.numpy(), e_e.numpy()
    else:
        e_l, e_e = model.encode_window(x)
    return (e_l[0], e_e[0]) if single else (e_l, e_e)


def swap_expression_features(expr_a, expr_b, swap: bool):
    """Exchange the full expression-feature blocks of the two streams.

    The speech halves are never touched; applying the same swap twice is
    the identity.
    """
    if expr_a.shape != expr_b.shape:
        raise ValueError(f"shape mismatch: {tuple(expr_a.shape)} vs {tuple(expr_b.shape)}")
    if not swap:
        return expr_a, expr_b
    return expr_b, expr_a


def decode_expression(model: ExprTransformer, speech_feats, expr_feats):
    """Reconstruct emotion features from the two streams, causally.

    Frame t of the output depends only on conditioning features at indices
    <= t and on the frames generated before it.
    """
    is_np = isinstance(speech_feats, np.ndarray)
    el = torch.as_tensor(speech_feats, dtype=torch.float32) if is_np else speech_feats
    ee = torch.as_tensor(expr_feats, dtype=torch.float32) if is_np else expr_feats
    if el.shape != ee.shape:
        raise ValueError(f"stream shapes differ: {tuple(el.shape)} vs {tuple(ee.shape)}")
    single = el.dim() == 2
    if single:
        el, ee = el[None], ee[None]
    if is_np:
        model.eval()
        with torch.no_grad():
            out = model.generate(el, ee)
        out = out.numpy()
    else:
        out = model.generate(el, ee)
    return out[0] if single else out


def expr_recon_loss(recon_a, recon_b, aligned_a, aligned_b) -> torch.Tensor:
    """Mean over the batch of both streams' summed absolute errors."""
    ts = [torch.as_tensor(t, dtype=torch.float64) if isinstance(t, np.ndarray) else t
          for t in (recon_a, recon_b, aligned_a, aligned_b)]
    recon_a, recon_b, aligned_a, aligned_b = ts
    if recon_a.shape != aligned_a.shape or recon_b.shape != aligned_b.shape:
        raise ValueError("reconstruction/target shapes differ")
    flat = lambda t: t.reshape(t.shape[0], -1) if t.dim() > 2 else t.reshape(1, -1)
    per = (flat(recon_a) - flat(aligned_a)).abs().sum(dim=-1) \
        + (flat(recon_b) - flat(aligned_b)).abs().sum(dim=-1)
    return per.mean()


def interpolate_expression(start, end, steps: int):
    """Linear interpolation between two expression features, endpoints included."""
    if steps < 2:
        raise ValueError("steps must be >= 2")
    s = np.asarray(start, dtype=np.float64)
    e = np.asarray(end, dtype=np.float64)
    ts = np.linspace(0.0, 1.0, steps)
    return [s + t * (e - s) for t in ts]


def extract_expression_track(model: ExprTransformer, seq) -> np.ndarray:
    """Per-frame expression features for a whole sequence.

    For frame t the window [t - w/2, t + w/2) is encoded and the output at
    the w/2-th position (frame t itself) is taken; boundary windows clamp
    to the sequence edges so the track has exactly the input length.
    """
    feats = np.asarray(seq, dtype=np.float32)
    w = model.window
    if feats.shape[0] < w:
        raise ValueError(f"sequence length {feats.shape[0]} is shorter than the window {w}")
    half = w // 2
    idx = np.arange(feats.shape[0])[:, None] + np.arange(-half, w - half)[None, :]
    idx = np.clip(idx, 0, feats.shape[0] - 1)
    windows = feats[idx]  # (T, w, feat)
    model.eval()
    out = []
    with torch.no_grad():
        for lo in range(0, windows.shape[0], 256):
            _, e_e = model.encode_window(torch.from_numpy(windows[lo:lo + 256]))
            out.append(e_e[:, half, :].numpy())
    return np.concatenate(out, axis=0)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class AlignedPair:
    video_a: str
    video_b: str
    feats_a: np.ndarray  # (N, feature_dim) after alignment
    feats_b: np.ndarray


def aligned_pairs(corpus, identity: int, split: str) -> list:
    """Time-align every utterance pair of an identity with DTW."""
    out = []
    for pair in corpus.pairs_for(identity, split=split):
        try:
            ea = corpus.emotion(pair.video_a)
            eb = corpus.emotion(pair.video_b)
        except (KeyError, FileNotFoundError) as err:
            warnings.warn(f"skipping unpaired utterance {pair.video_a}/{pair.video_b}: {err}")
            continue
        _, aa, ab = dtw_align(ea.astype(np.float64), eb.astype(np.float64))
        out.append(AlignedPair(pair.video_a, pair.video_b,
                               aa.astype(np.float32), ab.astype(np.float32)))
    return out


@dataclass
class ExprTrainResult:
    model: ExprTransformer
    log: tu.TrainLog
    heldout_loss: float
    baseline_loss: float
    optimizer_tensors: dict
    steps_done: int


def _window_batch(pairs, batch: int, window: int, rng):
    a_rows, b_rows = [], []
    for _ in range(batch):
        p = pairs[int(rng.integers(0, len(pairs)))]
        n = p.feats_a.shape[0]
        t = int(rng.integers(0, n - window + 1))
        a_rows.append(p.feats_a[t:t + window])
        b_rows.append(p.feats_b[t:t + window])
    return torch.from_numpy(np.stack(a_rows)), torch.from_numpy(np.stack(b_rows))


def _swapped_recon_loss(model, wa, wb, swap_mask: torch.Tensor):
    """Encode both streams, exchange expression halves where masked, decode.

    Each decode is paired with the rendition its expression features came
    from; the aligned counterpart's speech half is interchangeable by
    construction, which is exactly what the swap trains into the split.
    """
    el_a, ee_a = model.encode_window(wa)
    el_b, ee_b = model.encode_window(wb)
    m = swap_mask[:, None, None].to(wa.dtype)
    ee_1 = (1 - m) * ee_a + m * ee_b   # expression features now in stream 1
    ee_2 = (1 - m) * ee_b + m * ee_a
    target_1 = torch.where(swap_mask[:, None, None], wb, wa)
    target_2 = torch.where(swap_mask[:, None, None], wa, wb)
    recon_1 = model.decode_teacher_forced(el_a, ee_1, target_1)
    recon_2 = model.decode_teacher_forced(el_b, ee_2, target_2)
    return expr_recon_loss(recon_1, recon_2, target_1, target_2)


def train_expr_transformer(corpus, identity: int, cfg, seed: int, resume=None) -> ExprTrainResult:
    """Train one identity's expression transformer on its aligned pairs."""
    pairs = aligned_pairs(corpus, identity, split="train")
    if not pairs:
        raise ValueError(f"identity {identity} has no usable utterance pairs")
    tu.seed_torch(seed, "expr-init", identity)
    model = ExprTransformer(window=cfg.window, dropout=cfg.dropout)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    start = 0
    if resume is not None:
        tensors, meta = resume
        model.load_state_dict({k[len("model."):]: torch.from_numpy(np.asarray(v).copy())
                               for k, v in tensors.items() if k.startswith("model.")})
        tu.load_optimizer_tensors(opt, tensors)
        start = int(meta["step"])
    log = tu.TrainLog()
    model.train()
    for step in range(start, cfg.steps):
        rng = tu.step_rng(seed, "expr", identity, step)
        tu.seed_torch(seed, "expr-dropout", identity, step)
        wa, wb = _window_batch(pairs, cfg.batch, cfg.window, rng)
        swap_mask = torch.from_numpy(rng.random(cfg.batch) < cfg.swap_prob)
        loss = _swapped_recon_loss(model, wa, wb, swap_mask)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            log.add(step, loss.item())
    model.eval()
    heldout, baseline = heldout_expr_loss(model, corpus, identity, cfg, seed)
    return ExprTrainResult(model, log, heldout, baseline, tu.optimizer_tensors(opt), cfg.steps)


def heldout_expr_loss(model: ExprTransformer, corpus, identity: int, cfg, seed: int,
                      n_windows: int = 256):
    """Unswapped reconstruction loss on held-out pairs, plus the loss of a
    constant-mean predictor on the same windows."""
    pairs = aligned_pairs(corpus, identity, split="val")
    if not pairs:
        return float("nan"), float("nan")
    rng = tu.step_rng(seed, "expr-heldout", identity)
    wa, wb = _window_batch(pairs, n_windows, cfg.window, rng)
    model.eval()
    with torch.no_grad():
        el_a, ee_a = model.encode_window(wa)
        el_b, ee_b = model.encode_window(wb)
        recon_a = model.decode_teacher_forced(el_a, ee_a, wa)
        recon_b = model.decode_teacher_forced(el_b, ee_b, wb)
        loss = float(expr_recon_loss(recon_a, recon_b, wa, wb).item())
        mean = torch.cat([wa, wb]).mean(dim=(0, 1), keepdim=True)
        base = float(expr_recon_loss(mean.expand_as(wa), mean.expand_as(wb), wa, wb).item())
    return loss, base


def model_tensors(result: ExprTrainResult) -> tuple[dict, dict]:
    tensors = {f"model.{k}": v.detach().cpu().numpy()
               for k, v in result.model.state_dict().items()}
    tensors.update(result.optimizer_tensors)
    meta = {"step": result.steps_done, "heldout_loss": result.heldout_loss,
            "baseline_loss": result.baseline_loss}
    return tensors, meta


def model_from_tensors(tensors: dict, window: int = 8, dropout: float = 0.2) -> ExprTransformer:
    model = ExprTransformer(window=window, dropout=dropout)
    model.load_state_dict({k[len("model."):]: torch.from_numpy(np.asarray(v).copy())
                           for k, v in tensors.items() if k.startswith("model.")})
    model.eval()
    return model
