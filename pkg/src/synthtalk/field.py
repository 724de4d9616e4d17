"""Conditional dynamic radiance field with hierarchical volume rendering.

The field maps (conditioning vector, view direction, 3-D point) to color
and density; density reads only the encoded point and the conditioning,
never the direction. Rendering uses the discrete alpha-compositing
quadrature with interval widths closed at the far bound, and the ray's
leftover transmittance takes the background color. A coarse and a fine
network are trained jointly on a photo-consistency loss.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from . import train_utils as tu
from .world import ground_truth_render

COND_DIM = 128
X_FREQS = 10
D_FREQS = 4


def positional_encode(v: torch.Tensor, n_freqs: int) -> torch.Tensor:
    """Interleaved sin/cos features at octave frequencies, per coordinate.

    Maps (..., n) to (..., 2*n*n_freqs) ordered coordinate-major:
    [sin(2^0 pi v_0), cos(2^0 pi v_0), ..., sin(2^{L-1} pi v_0), ...].
    """
    if n_freqs < 1:
        raise ValueError("n_freqs must be >= 1")
    if not torch.isfinite(v).all():
        raise ValueError("positional encoding input must be finite")
    freqs = (2.0 ** torch.arange(n_freqs, dtype=v.dtype, device=v.device)) * math.pi
    ang = v[..., None] * freqs  # (..., n, L)
    enc = torch.stack([torch.sin(ang), torch.cos(ang)], dim=-1)  # (..., n, L, 2)
    return enc.flatten(start_dim=-3)


class FieldMLP(nn.Module):
    """8 affine layers (hidden 128) on encoded point + conditioning;
    sigma via softplus, color via sigmoid with the encoded direction
    injected only into the color head."""

    def __init__(self, cond_dim: int = COND_DIM, hidden: int = 128, n_layers: int = 8):
        super().__init__()
        self.cond_dim = cond_dim
        in_dim = 2 * 3 * X_FREQS + cond_dim
        layers = []
        for i in range(n_layers):
            layers += [nn.Linear(in_dim if i == 0 else hidden, hidden), nn.ReLU()]
        self.trunk = nn.Sequential(*layers)
        self.sigma_head = nn.Linear(hidden, 1)
        self.color_hidden = nn.Linear(hidden + 2 * 3 * D_FREQS, hidden)
        self.color_out = nn.Linear(hidden, 3)

    def forward(self, x: torch.Tensor, d: torch.Tensor, cond: torch.Tensor):
        h = self.trunk(torch.cat([positional_encode(x, X_FREQS), cond], dim=-1))
        sigma = nn.functional.softplus(self.sigma_head(h)).squeeze(-1)
        ch = torch.relu(self.color_hidden(torch.cat([h, positional_encode(d, D_FREQS)], dim=-1)))
        rgb = torch.sigmoid(self.color_out(ch))
        return rgb, sigma


def eval_field(mlp: FieldMLP, cond: torch.Tensor, d: torch.Tensor, x: torch.Tensor):
    """(color, density) at points; validates finiteness of all inputs."""
    for name, t in (("conditioning", cond), ("direction", d), ("point", x)):
        if not torch.isfinite(t).all():
            raise ValueError(f"{name} contains non-finite values")
    if cond.shape[-1] != mlp.cond_dim:
        raise ValueError(f"conditioning width {cond.shape[-1]} != {mlp.cond_dim}")
    return mlp(x, d, cond)


# ---------------------------------------------------------------------------
# Rays and quadrature
# ---------------------------------------------------------------------------

@dataclass
class RayBundle:
    """Batched rays: unit directions, ordered bounds, background color."""

    origins: torch.Tensor    # (N, 3)
    dirs: torch.Tensor       # (N, 3), unit
    near: float
    far: float
    background: torch.Tensor  # (3,)

    def __post_init__(self):
        norms = torch.linalg.vector_norm(self.dirs, dim=-1)
        if not torch.all((norms - 1.0).abs() <= 1e-6):
            raise ValueError("ray directions must be unit vectors (within 1e-6)")
        if not (0 <= self.near < self.far):
            raise ValueError(f"require 0 <= near < far, got [{self.near}, {self.far}]")

    def __len__(self):
        return self.origins.shape[0]


@dataclass
class RaySampleSet:
    """Per-ray sorted sample depths with field values and interval widths."""

    depths: torch.Tensor   # (N, S), strictly increasing
    sigmas: torch.Tensor   # (N, S), nonnegative
    colors: torch.Tensor   # (N, S, 3)
    deltas: torch.Tensor   # (N, S)

    def __post_init__(self):
        if torch.any(self.depths[..., 1:] <= self.depths[..., :-1]):
            raise ValueError("sample depths must be strictly increasing")


def deltas_from_depths(depths: torch.Tensor, t_far: float) -> torch.Tensor:
    """Interval widths between consecutive depths, closed at the far bound."""
    return torch.cat([depths[..., 1:] - depths[..., :-1],
                      t_far - depths[..., -1:]], dim=-1)


def make_sample_set(depths, sigmas, colors, t_far: float) -> RaySampleSet:
    return RaySampleSet(depths, sigmas, colors, deltas_from_depths(depths, t_far))


def composite(samples: RaySampleSet, background: torch.Tensor):
    """Alpha-composited color and the per-sample quadrature weights.

    alpha_i = 1 - exp(-sigma_i * delta_i); T_i is the product of the
    survival factors before i; the ray color is sum(T_i alpha_i c_i) plus
    the final transmittance times the background. The weights and the
    final transmittance sum to one by telescoping.
    """
    alphas = 1.0 - torch.exp(-samples.sigmas * samples.deltas)
    survive = torch.cumprod(1.0 - alphas, dim=-1)
    trans = torch.cat([torch.ones_like(survive[..., :1]), survive[..., :-1]], dim=-1)
    weights = trans * alphas
    rgb = (weights[..., None] * samples.colors).sum(dim=-2) \
        + survive[..., -1:] * background.to(samples.colors.dtype)
    return rgb, weights, survive[..., -1]


def render_ray(samples: RaySampleSet, background) -> torch.Tensor:
    """Quadrature of the volume-rendering integral over one sample set."""
    bg = torch.as_tensor(background, dtype=samples.colors.dtype)
    rgb, _, _ = composite(samples, bg)
    return rgb


def stratified_sample(near: float, far: float, n_rays: int, n_coarse: int,
                      generator: torch.Generator, dtype=torch.float32) -> torch.Tensor:
    """One uniform draw per equal-width bin of [near, far], per ray; sorted."""
    if n_coarse < 2:
        raise ValueError("n_coarse must be >= 2")
    width = (far - near) / n_coarse
    u = torch.rand(n_rays, n_coarse, generator=generator, dtype=dtype)
    bins = torch.arange(n_coarse, dtype=dtype)[None, :]
    return near + (bins + u) * width


def importance_sample(coarse_depths: torch.Tensor, coarse_weights: torch.Tensor,
                      n_fine: int, generator: torch.Generator,
                      t_far: float | None = None) -> torch.Tensor:
    """Inverse-transform draws from the piecewise-constant weight density.

    Each coarse sample's weight covers the interval up to the next depth
    (the last one up to ``t_far`` when given). Rays whose weights are all
    zero fall back to stratified sampling over the full range. Returns the
    fine depths merged with the coarse ones, sorted.
    """
    if torch.any(coarse_weights < 0):
        raise ValueError("weights must be nonnegative")
    n_rays, n_coarse = coarse_depths.shape
    far_edge = coarse_depths[..., -1:] if t_far is None else torch.full_like(
        coarse_depths[..., -1:], t_far)
    edges = torch.cat([coarse_depths, far_edge], dim=-1)  # (N, S+1)
    w = coarse_weights.clone()
    dead = w.sum(dim=-1) <= 0
    if torch.any(dead):
        w[dead] = 1.0  # uniform over bins == stratified fallback
    pdf = w / w.sum(dim=-1, keepdim=True)
    cdf = torch.cumsum(pdf, dim=-1)
    cdf = torch.cat([torch.zeros_like(cdf[..., :1]), cdf], dim=-1)
    u = torch.rand(n_rays, n_fine, generator=generator, dtype=coarse_depths.dtype)
    idx = torch.searchsorted(cdf, u, right=True).clamp(1, n_coarse) - 1
    cdf_lo = torch.gather(cdf, 1, idx)
    cdf_hi = torch.gather(cdf, 1, idx + 1)
    lo = torch.gather(edges, 1, idx)
    hi = torch.gather(edges, 1, idx + 1)
    denom = (cdf_hi - cdf_lo).clamp_min(1e-12)
    fine = lo + (u - cdf_lo) / denom * (hi - lo)
    merged, _ = torch.sort(torch.cat([coarse_depths, fine], dim=-1), dim=-1)
    return merged


def photo_loss(pred: torch.Tensor, truth: torch.Tensor) -> torch.Tensor:
    """Mean over rays of the squared L2 color error."""
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(truth.shape)}")
    return ((pred - truth) ** 2).sum(dim=-1).mean()


# ---------------------------------------------------------------------------
# Hierarchical rendering
# ---------------------------------------------------------------------------

def _dedupe_depths(depths: torch.Tensor) -> torch.Tensor:
    """Nudge exactly-coincident merged depths apart to keep them increasing."""
    eps = 1e-6 * (depths[..., -1:] - depths[..., :1]).clamp_min(1e-6)
    bump = torch.cumsum((depths[..., 1:] <= depths[..., :-1]).to(depths.dtype), dim=-1)
    return torch.cat([depths[..., :1], depths[..., 1:] + eps * bump], dim=-1)


def render_hierarchical(coarse: FieldMLP, fine: FieldMLP, bundle: RayBundle,
                        cond: torch.Tensor, n_coarse: int, n_fine: int,
                        generator: torch.Generator):
    """Coarse pass, weight-guided fine resampling, fine pass.

    Both networks receive the same conditioning. Returns the coarse and
    fine ray colors.
    """
    dtype = bundle.origins.dtype
    depths_c = stratified_sample(bundle.near, bundle.far, len(bundle), n_coarse,
                                 generator, dtype=dtype)
    rgb_c, weights = _field_pass(coarse, bundle, cond, depths_c)
    with torch.no_grad():
        merged = importance_sample(depths_c.detach(), weights.detach(), n_fine,
                                   generator, t_far=bundle.far)
        merged = _dedupe_depths(merged)
    rgb_f, _ = _field_pass(fine, bundle, cond, merged)
    return rgb_c, rgb_f


def _field_pass(mlp: FieldMLP, bundle: RayBundle, cond: torch.Tensor,
                depths: torch.Tensor):
    pts = bundle.origins[:, None, :] + depths[..., None] * bundle.dirs[:, None, :]
    n_rays, n_samples = depths.shape
    dirs = bundle.dirs[:, None, :].expand(-1, n_samples, -1)
    cond_e = cond[:, None, :].expand(-1, n_samples, -1)
    rgb, sigma = mlp(pts.reshape(-1, 3), dirs.reshape(-1, 3),
                     cond_e.reshape(-1, cond.shape[-1]))
    samples = make_sample_set(depths, sigma.reshape(n_rays, n_samples),
                              rgb.reshape(n_rays, n_samples, 3), bundle.far)
    color, weights, _ = composite(samples, bundle.background.to(depths.dtype))
    return color, weights


# ---------------------------------------------------------------------------
# Training and frame rendering
# ---------------------------------------------------------------------------

@dataclass
class NerfTrainResult:
    coarse: FieldMLP
    fine: FieldMLP
    log: tu.TrainLog
    optimizer_tensors: dict
    steps_done: int


class FrameTable:
    """Training/held-out frame split plus cached rays and target pixels."""

    def __init__(self, corpus, cfg, video_ids):
        self.scene = corpus.scene
        self.resolution = cfg.resolution
        entries = []
        for vid in video_ids:
            n = corpus.videos[vid].n_frames
            for t in range(n):
                entries.append((vid, t))
        self.heldout = [e for i, e in enumerate(entries) if i % cfg.heldout_every == 0]
        train = [e for i, e in enumerate(entries) if i % cfg.heldout_every != 0]
        if len(train) > cfg.max_train_frames:
            keep = np.linspace(0, len(train) - 1, cfg.max_train_frames).astype(int)
            train = [train[i] for i in keep]
        self.train = train
        self._factors = {vid: corpus.factors(vid) for vid in video_ids}
        self._ray_cache: dict = {}
        self._img_cache: dict = {}

    def pose(self, vid, t):
        f = self._factors[vid][t]
        return f[3:6]

    def factors(self, vid, t):
        return self._factors[vid][t]

    def rays(self, vid, t):
        key = (vid, t)
        if key not in self._ray_cache:
            o, d = self.scene.camera_rays(self.pose(vid, t), self.resolution)
            self._ray_cache[key] = (torch.tensor(o, dtype=torch.float32),
                                    torch.tensor(d, dtype=torch.float32))
        return self._ray_cache[key]

    def target_image(self, vid, t, cache_dir=None) -> np.ndarray:
        key = (vid, t)
        if key not in self._img_cache:
            path = None
            if cache_dir is not None:
                path = cache_dir / f"{vid}_{t:05d}_{self.resolution}.npy"
            if path is not None and path.exists():
                img = np.load(path)
            else:
                f = self.factors(vid, t)
                img = ground_truth_render(self.scene, f[0], f[2], f[3:6],
                                          self.resolution).astype(np.float32)
                if path is not None:
                    np.save(path, img)
            self._img_cache[key] = img
        return self._img_cache[key]


def train_nerf(corpus, tracks: dict, cfg, seed: int, resume=None,
               target_cache_dir=None) -> NerfTrainResult:
    """Optimize coarse and fine fields on the photo-consistency loss.

    ``tracks`` maps video id -> dict with per-frame "audio" and "expr"
    embedding matrices; their concatenation conditions both networks.
    Raises if any training video lacks a conditioning track.
    """
    video_ids = corpus.video_ids(identity=cfg.identity)
    missing = [v for v in video_ids if v not in tracks]
    if missing:
        raise ValueError(f"missing conditioning tracks for {missing}")
    table = FrameTable(corpus, cfg, video_ids)
    cond_of = {}
    for vid in video_ids:
        e_a = np.asarray(tracks[vid]["audio"], dtype=np.float32)
        e_e = np.asarray(tracks[vid]["expr"], dtype=np.float32)
        cond_of[vid] = torch.from_numpy(np.concatenate([e_a, e_e], axis=1))
        if cond_of[vid].shape[1] != cfg.cond_dim:
            raise ValueError(f"conditioning width {cond_of[vid].shape[1]} != {cfg.cond_dim}")

    tu.seed_torch(seed, "nerf-init")
    coarse = FieldMLP(cond_dim=cfg.cond_dim)
    fine = FieldMLP(cond_dim=cfg.cond_dim)
    params = list(coarse.parameters()) + list(fine.parameters())
    opt = torch.optim.Adam(params, lr=cfg.lr)
    start = 0
    if resume is not None:
        tensors, meta = resume
        coarse.load_state_dict({k[len("coarse."):]: torch.from_numpy(np.asarray(v).copy())
                                for k, v in tensors.items() if k.startswith("coarse.")})
        fine.load_state_dict({k[len("fine."):]: torch.from_numpy(np.asarray(v).copy())
                              for k, v in tensors.items() if k.startswith("fine.")})
        tu.load_optimizer_tensors(opt, tensors)
        start = int(meta["step"])

    background = torch.tensor(corpus.scene.background, dtype=torch.float32)
    log = tu.TrainLog()
    n_px = cfg.resolution * cfg.resolution
    for step in range(start, cfg.steps):
        rng = tu.step_rng(seed, "nerf", step)
        vid, t = table.train[int(rng.integers(0, len(table.train)))]
        px = rng.choice(n_px, size=min(cfg.rays_per_batch, n_px), replace=False)
        origins, dirs = table.rays(vid, t)
        target = torch.from_numpy(
            table.target_image(vid, t, target_cache_dir).reshape(-1, 3)[px])
        bundle = RayBundle(origins[px], dirs[px], corpus.scene.near,
                           corpus.scene.far, background)
        cond = cond_of[vid][t][None, :].expand(len(px), -1)
        gen = torch.Generator().manual_seed(tu.derived_seed(seed, "nerf-ray", step))
        rgb_c, rgb_f = render_hierarchical(coarse, fine, bundle, cond,
                                           cfg.n_coarse, cfg.n_fine, gen)
        loss = photo_loss(rgb_c, target) + photo_loss(rgb_f, target)
        tu.set_lr(opt, tu.exp_decay_lr(cfg.lr, cfg.lr_final, step, cfg.steps))
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            log.add(step, loss.item())
    return NerfTrainResult(coarse, fine, log, tu.optimizer_tensors(opt), cfg.steps)


def render_frame(coarse: FieldMLP, fine: FieldMLP, scene, audio_embed, expr_embed,
                 pose, resolution: int, n_coarse: int, n_fine: int,
                 chunk: int = 4096) -> np.ndarray:
    """Render one frame with the fine field; deterministic per call.

    Conditioning is the concatenated audio and expression embedding of the
    frame. Returns an (res, res, 3) float image in [0, 1].
    """
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    cond_np = np.concatenate([np.asarray(audio_embed, dtype=np.float32),
                              np.asarray(expr_embed, dtype=np.float32)])
    origins, dirs = scene.camera_rays(pose, resolution)
    background = torch.tensor(scene.background, dtype=torch.float32)
    out = np.empty((resolution * resolution, 3), dtype=np.float32)
    coarse.eval()
    fine.eval()
    with torch.no_grad():
        for lo in range(0, origins.shape[0], chunk):
            hi = min(lo + chunk, origins.shape[0])
            bundle = RayBundle(torch.tensor(origins[lo:hi], dtype=torch.float32),
                               torch.tensor(dirs[lo:hi], dtype=torch.float32),
                               scene.near, scene.far, background)
            cond = torch.from_numpy(cond_np)[None, :].expand(hi - lo, -1)
            gen = torch.Generator().manual_seed(tu.derived_seed(0, "render", lo))
            _, rgb_f = render_hierarchical(coarse, fine, bundle, cond,
                                           n_coarse, n_fine, gen)
            out[lo:hi] = rgb_f.numpy()
    return np.clip(out.reshape(resolution, resolution, 3), 0.0, 1.0)


def nerf_tensors(result: NerfTrainResult, scene_meta: dict) -> tuple[dict, dict]:
    tensors = {}
    for prefix, model in (("coarse", result.coarse), ("fine", result.fine)):
        for k, v in model.state_dict().items():
            tensors[f"{prefix}.{k}"] = v.detach().cpu().numpy()
    tensors.update(result.optimizer_tensors)
    return tensors, {"step": result.steps_done, "scene": scene_meta}


def nerf_from_tensors(tensors: dict, cond_dim: int = COND_DIM):
    coarse = FieldMLP(cond_dim=cond_dim)
    fine = FieldMLP(cond_dim=cond_dim)
    coarse.load_state_dict({k[len("coarse."):]: torch.from_numpy(np.asarray(v).copy())
                            for k, v in tensors.items() if k.startswith("coarse.")})
    fine.load_state_dict({k[len("fine."):]: torch.from_numpy(np.asarray(v).copy())
                          for k, v in tensors.items() if k.startswith("fine.")})
    coarse.eval()
    fine.eval()
    return coarse, fine
