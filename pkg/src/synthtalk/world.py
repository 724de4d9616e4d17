"""Deterministic synthetic corpus generators with published ground truth.

Everything downstream trains on data produced here: landmark sequences,
per-frame audio features, high-dimensional emotion features, paired
utterances (same speech profile spoken under two emotion labels), camera
pose tracks, and an analytic volumetric head scene used as the rendering
oracle. Two latent factors drive all modalities:

* speech factor s(t) in [0, 1] - fast chirped oscillation; controls mouth
  opening, audio features, and the scene's mouth cavity.
* expression factor g(t) in [0, 1] - slow, emotion-labelled; controls
  brow/eye landmarks and the scene's global hue.

Every artifact is a pure function of (corpus spec, seed), so regenerating
with the same inputs is byte-for-byte reproducible.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Emotion labels and their expression-factor base levels.
EMOTION_LEVELS = {
    "neutral": 0.20,
    "happy": 0.80,
    "sad": 0.40,
    "angry": 0.60,
}

# Flat index (into the 102-wide landmark row) of the inner-lip coordinate
# whose value is affine in the speech factor; see landmarks_from_factors.
MOUTH_OPEN_COORD = 91

N_EYE_NOSE = 31
N_MOUTH = 20
AUDIO_FEATURE_DIM = 29
EMOTION_FEATURE_DIM = 2048


@dataclass(frozen=True)
class CorpusSpec:
    """Size parameters of a generated corpus.

    Each (identity, sentence) yields one paired utterance: the same speech
    profile rendered under two different emotion labels, the second
    rendition tempo-warped by duplicating a fraction of frames. The last
    ``val_sentences`` sentences of every identity form the held-out split.
    """

    identities: int = 3
    sentences: int = 3
    val_sentences: int = 1
    frames_per_video: int = 110
    duplicate_fraction: float = 0.15
    emotions: tuple = ("neutral", "happy", "sad", "angry")

    def __post_init__(self):
        if self.identities < 1 or self.sentences < 1 or self.frames_per_video < 1:
            raise ValueError("all corpus counts must be >= 1")
        if not (0 < self.val_sentences < self.sentences + 1):
            raise ValueError("val_sentences must be in [1, sentences]")
        if self.sentences < 1:
            raise ValueError("each identity needs >= 1 sentence (2 videos)")
        unknown = [e for e in self.emotions if e not in EMOTION_LEVELS]
        if unknown:
            raise ValueError(f"unknown emotion labels {unknown}")
        if len(self.emotions) < 2:
            raise ValueError("need at least two emotion labels")


def _rng(seed, *key):
    """Deterministic per-artifact generator derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


# ---------------------------------------------------------------------------
# Factor tracks
# ---------------------------------------------------------------------------

def speech_profile(n_frames: int, rng) -> np.ndarray:
    """Chirped speech factor: an oscillation whose rate ramps up ~60%.

    The ramp keeps (s, ds/dt) pairs distinct across oscillation periods so
    that a frame's mouth state identifies it within a video.
    """
    w0 = rng.uniform(0.32, 0.42)
    phase0 = rng.uniform(0, 2 * np.pi)
    t = np.arange(n_frames)
    rate = w0 * (1.0 + 0.6 * t / max(n_frames - 1, 1))
    theta = phase0 + np.cumsum(rate)
    return 0.5 + 0.45 * np.sin(theta)


def expression_track(n_frames: int, emotion: str, rng) -> np.ndarray:
    """Slow expression factor around the emotion's base level."""
    base = EMOTION_LEVELS[emotion]
    phase = rng.uniform(0, 2 * np.pi)
    t = np.arange(n_frames) / max(n_frames - 1, 1)
    return np.clip(base + 0.06 * np.sin(2 * np.pi * 0.4 * t + phase), 0.0, 1.0)


def pose_track(n_frames: int, rng) -> np.ndarray:
    """Per-frame (yaw, pitch, distance): small orbits around frontal."""
    t = np.arange(n_frames) / max(n_frames - 1, 1)
    yaw = np.deg2rad(8.0) * np.sin(2 * np.pi * 0.23 * t + rng.uniform(0, 2 * np.pi))
    pitch = np.deg2rad(5.0) * np.sin(2 * np.pi * 0.17 * t + rng.uniform(0, 2 * np.pi))
    dist = np.full(n_frames, 1.35)
    return np.stack([yaw, pitch, dist], axis=1)


def tempo_warp_indices(n_frames: int, duplicate_fraction: float, rng) -> np.ndarray:
    """Frame indices for a slowed-down rendition: some frames repeat once."""
    n_dup = int(round(duplicate_fraction * n_frames))
    dup_at = set(rng.choice(n_frames, size=n_dup, replace=False).tolist()) if n_dup else set()
    idx = []
    for i in range(n_frames):
        idx.append(i)
        if i in dup_at:
            idx.append(i)
    return np.asarray(idx, dtype=np.int64)


def finite_difference(x: np.ndarray) -> np.ndarray:
    """Centered first difference with one-sided ends."""
    d = np.empty_like(x)
    d[1:-1] = 0.5 * (x[2:] - x[:-2])
    d[0] = x[1] - x[0] if len(x) > 1 else 0.0
    d[-1] = x[-1] - x[-2] if len(x) > 1 else 0.0
    return d


# ---------------------------------------------------------------------------
# Landmarks
# ---------------------------------------------------------------------------

def _eye_nose_template() -> np.ndarray:
    pts = []
    for side in (-1, 1):  # brows: 5 points each
        xs = 0.5 + side * np.linspace(0.08, 0.24, 5)
        ys = np.full(5, 0.34) - 0.012 * np.abs(np.linspace(-1, 1, 5))
        pts.extend(np.stack([xs, ys], axis=1))
    for side in (-1, 1):  # eyes: 6 points each
        ang = np.linspace(0, 2 * np.pi, 6, endpoint=False)
        xs = 0.5 + side * 0.16 + 0.05 * np.cos(ang)
        ys = 0.44 + 0.018 * np.sin(ang)
        pts.extend(np.stack([xs, ys], axis=1))
    nose_x = np.concatenate([np.full(4, 0.5), 0.5 + np.linspace(-0.045, 0.045, 5)])
    nose_y = np.concatenate([np.linspace(0.46, 0.58, 4), np.full(5, 0.60)])
    pts.extend(np.stack([nose_x, nose_y], axis=1))
    return np.asarray(pts)  # (31, 2)


_EYE_TEMPLATE = _eye_nose_template()
_BROW_ROWS = np.arange(0, 10)
_EYE_VERT_ROWS = np.array([11, 12, 14, 15, 17, 18, 20, 21])  # non-corner eye points


def identity_offsets(seed, identity: int) -> np.ndarray:
    """Small fixed eye-nose shape offsets that distinguish identities."""
    rng = _rng(seed, 900, identity)
    return 0.010 * rng.standard_normal((N_EYE_NOSE, 2))


def landmarks_from_factors(s, sdot, g, eye_nose_offset=None) -> np.ndarray:
    """Render factor tracks into 51-point landmark frames.

    Returns (frames, 102) rows in [0, 1] image coordinates, eye-nose
    points first. The expression factor moves brows and eye openness; the
    speech factor opens the mouth (column ``MOUTH_OPEN_COORD`` is affine
    in s) and its rate modulates mouth width. The two groups never share
    a driving factor.
    """
    s = np.asarray(s, dtype=np.float64)
    sdot = np.asarray(sdot, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    n = len(s)
    eye_nose = np.broadcast_to(_EYE_TEMPLATE, (n, N_EYE_NOSE, 2)).copy()
    if eye_nose_offset is not None:
        eye_nose += eye_nose_offset[None, :, :]
    eye_nose[:, _BROW_ROWS, 1] -= 0.05 * (g[:, None] - 0.5)
    eye_sin = _EYE_TEMPLATE[_EYE_VERT_ROWS, 1] - 0.44
    eye_nose[:, _EYE_VERT_ROWS, 1] = 0.44 + (0.7 + 0.6 * g[:, None]) * eye_sin[None, :]
    if eye_nose_offset is not None:
        eye_nose[:, _EYE_VERT_ROWS, 1] += eye_nose_offset[None, _EYE_VERT_ROWS, 1]

    cx, cy = 0.5, 0.72
    width = 1.0 + 0.12 * np.tanh(sdot / 0.18)
    ang_out = np.linspace(0, 2 * np.pi, 12, endpoint=False)
    ang_in = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    rx_out = 0.105 * width[:, None]
    ry_out = 0.040 + 0.022 * s[:, None]
    rx_in = 0.060 * width[:, None]
    ry_in = 0.006 + 0.048 * s[:, None]
    outer = np.stack([cx + rx_out * np.cos(ang_out), cy + ry_out * np.sin(ang_out)], axis=2)
    inner = np.stack([cx + rx_in * np.cos(ang_in), cy + ry_in * np.sin(ang_in)], axis=2)
    mouth = np.concatenate([outer, inner], axis=1)  # (n, 20, 2)
    frames = np.concatenate([eye_nose.reshape(n, -1), mouth.reshape(n, -1)], axis=1)
    return frames


# ---------------------------------------------------------------------------
# Audio and emotion features
# ---------------------------------------------------------------------------

def audio_mixing(seed):
    """Fixed sinusoidal lift of the speech factor to AUDIO_FEATURE_DIM channels."""
    rng = _rng(seed, 910)
    freqs = np.pi * np.exp(rng.uniform(np.log(0.7), np.log(3.0), AUDIO_FEATURE_DIM))
    phases = rng.uniform(0, 2 * np.pi, AUDIO_FEATURE_DIM)
    return freqs, phases


def audio_features_from_speech(s: np.ndarray, freqs, phases) -> np.ndarray:
    return np.sin(np.outer(s, freqs) + phases[None, :]).astype(np.float64)


def emotion_lift(seed):
    """Fixed affine lift of the (g, s) latent to EMOTION_FEATURE_DIM channels.

    The matrix has orthogonal columns with singular values (11, 9), so its
    condition number is ~1.2 and linear probes stay well-posed.
    """
    rng = _rng(seed, 920)
    raw = rng.standard_normal((EMOTION_FEATURE_DIM, 2))
    q, _ = np.linalg.qr(raw)
    w = q @ np.diag([11.0, 9.0])
    b = 0.05 * rng.standard_normal(EMOTION_FEATURE_DIM)
    return w, b


def emotion_features_from_factors(g, s, w, b) -> np.ndarray:
    z = np.stack([np.asarray(g), np.asarray(s)], axis=1)
    return z @ w.T + b[None, :]


# ---------------------------------------------------------------------------
# Analytic scene
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthScene:
    """Analytic head blob whose appearance is a function of (s, g, pose).

    Density is a static soft ellipsoid; color carries all the dynamics: a
    dark mouth cavity whose vertical extent opens with the speech factor,
    and a global hue shift that is affine in the expression factor.
    """

    head_radii: tuple = (0.30, 0.38, 0.32)
    head_sharpness: float = 14.0
    head_density: float = 30.0
    mouth_center: tuple = (0.0, -0.16, 0.24)
    mouth_rx: float = 0.085
    mouth_rz: float = 0.10
    mouth_ry_base: float = 0.014
    mouth_ry_gain: float = 0.062
    mouth_sharpness: float = 40.0
    cavity_color: tuple = (0.35, 0.05, 0.08)
    base_color: tuple = (0.82, 0.62, 0.52)
    hue_tint: tuple = (-0.25, 0.05, 0.35)
    shade_gain: float = 0.25
    camera_fov_deg: float = 42.0
    near: float = 0.80
    far: float = 1.90
    background: tuple = (1.0, 1.0, 1.0)
    bounds: float = 0.55

    def to_dict(self):
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(d):
        return SynthScene(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def density(self, pts: np.ndarray) -> np.ndarray:
        """Static nonnegative density field at (N, 3) points."""
        q = np.sum((pts / np.asarray(self.head_radii)) ** 2, axis=-1)
        return self.head_density / (1.0 + np.exp(-self.head_sharpness * (1.0 - q)))

    def mouth_weight(self, pts: np.ndarray, s: float) -> np.ndarray:
        """Soft indicator of the mouth cavity; its y-extent opens with s."""
        mc = np.asarray(self.mouth_center)
        ry = self.mouth_ry_base + self.mouth_ry_gain * s
        q = ((pts[..., 0] - mc[0]) / self.mouth_rx) ** 2 \
            + ((pts[..., 1] - mc[1]) / ry) ** 2 \
            + ((pts[..., 2] - mc[2]) / self.mouth_rz) ** 2
        return 1.0 / (1.0 + np.exp(np.clip(self.mouth_sharpness * (q - 1.0), -60, 60)))

    def color(self, pts: np.ndarray, s: float, g: float) -> np.ndarray:
        base = np.asarray(self.base_color) + (g - 0.5) * np.asarray(self.hue_tint)
        shade = self.shade_gain * pts[..., 1:2]
        skin = np.clip(base[None, :] + shade, 0.0, 1.0)
        w = self.mouth_weight(pts, s)[..., None]
        return (1.0 - w) * skin + w * np.asarray(self.cavity_color)[None, :]

    def fields(self, pts, s, g):
        """(density, color) at points, the quantity the radiance field must learn."""
        return self.density(pts), self.color(pts, s, g)

    # -- camera ------------------------------------------------------------

    def focal(self, resolution: int) -> float:
        return 0.5 * resolution / np.tan(0.5 * np.deg2rad(self.camera_fov_deg))

    def camera_rays(self, pose, resolution: int):
        """Pixel rays for a (yaw, pitch, dist) pose, row-major pixel order.

        Returns (origins, dirs) of shape (res*res, 3); directions are unit.
        """
        yaw, pitch, dist = float(pose[0]), float(pose[1]), float(pose[2])
        cam_pos = dist * np.array([
            np.sin(yaw) * np.cos(pitch),
            np.sin(pitch),
            np.cos(yaw) * np.cos(pitch),
        ])
        fwd = -cam_pos / np.linalg.norm(cam_pos)
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)
        f = self.focal(resolution)
        px = np.arange(resolution) + 0.5
        u, v = np.meshgrid(px, px)  # v indexes rows (image y), u columns
        x = (u - resolution / 2) / f
        y = -(v - resolution / 2) / f
        dirs = x[..., None] * right + y[..., None] * up + 1.0 * fwd
        dirs = dirs.reshape(-1, 3)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        origins = np.broadcast_to(cam_pos, dirs.shape).copy()
        return origins, dirs

    def mouth_mask(self, pose, resolution: int) -> np.ndarray:
        """Pixels whose rays pass through the mouth region at any opening.

        This is the projected support of the s-dependent color term (taken
        at the widest opening, with a small margin), so any appearance
        change caused by the speech factor lies inside it.
        """
        origins, dirs = self.camera_rays(pose, resolution)
        mc = np.asarray(self.mouth_center)
        ry = self.mouth_ry_base + self.mouth_ry_gain * 1.0
        radii = 1.12 * np.array([self.mouth_rx, ry, self.mouth_rz])
        o = (origins - mc) / radii
        d = dirs / radii
        a = np.sum(d * d, axis=1)
        b = 2 * np.sum(o * d, axis=1)
        c = np.sum(o * o, axis=1) - 1.0
        hit = b * b - 4 * a * c >= 0
        return hit.reshape(resolution, resolution)

    def head_mask(self, pose, resolution: int) -> np.ndarray:
        """Pixels whose rays intersect the head ellipsoid."""
        origins, dirs = self.camera_rays(pose, resolution)
        radii = np.asarray(self.head_radii)
        o = origins / radii
        d = dirs / radii
        a = np.sum(d * d, axis=1)
        b = 2 * np.sum(o * d, axis=1)
        c = np.sum(o * o, axis=1) - 1.0
        hit = b * b - 4 * a * c >= 0
        return hit.reshape(resolution, resolution)


def ground_truth_render(scene: SynthScene, s, g, pose, resolution: int,
                        n_samples: int = 256) -> np.ndarray:
    """Oracle render of the analytic scene by dense midpoint quadrature.

    Deterministic; returns an (res, res, 3) float image in [0, 1] on the
    scene background. This is the target the learned field must match.
    """
    origins, dirs = scene.camera_rays(pose, resolution)
    n_rays = origins.shape[0]
    t_edges = np.linspace(scene.near, scene.far, n_samples + 1)
    t_mid = 0.5 * (t_edges[:-1] + t_edges[1:])
    delta = (scene.far - scene.near) / n_samples
    img = np.empty((n_rays, 3))
    chunk = 2048
    for lo in range(0, n_rays, chunk):
        hi = min(lo + chunk, n_rays)
        pts = origins[lo:hi, None, :] + t_mid[None, :, None] * dirs[lo:hi, None, :]
        flat = pts.reshape(-1, 3)
        sigma = scene.density(flat).reshape(hi - lo, n_samples)
        color = scene.color(flat, float(s), float(g)).reshape(hi - lo, n_samples, 3)
        alpha = 1.0 - np.exp(-sigma * delta)
        survive = np.cumprod(1.0 - alpha, axis=1)
        trans = np.concatenate([np.ones((hi - lo, 1)), survive[:, :-1]], axis=1)
        weights = trans * alpha
        acc = np.sum(weights[..., None] * color, axis=1)
        img[lo:hi] = acc + survive[:, -1:] * np.asarray(scene.background)[None, :]
    return np.clip(img.reshape(resolution, resolution, 3), 0.0, 1.0)


def hue_proxy(image: np.ndarray, head_mask: np.ndarray) -> float:
    """Scene hue statistic that is monotone in the expression factor.

    Mean (blue - red) over head pixels; the hue tint moves blue up and red
    down as g grows, so this increases monotonically with g.
    """
    sel = image[head_mask]
    return float(np.mean(sel[:, 2] - sel[:, 0]))


# ---------------------------------------------------------------------------
# Corpus generation
# ---------------------------------------------------------------------------

@dataclass
class VideoRecord:
    video_id: str
    identity: int
    sentence: int
    emotion: str
    rendition: str  # "a" or "b"
    split: str      # "train" or "val"
    n_frames: int


MANIFEST_FIELDS = ["video_id", "identity", "sentence", "emotion", "rendition", "split", "n_frames"]

SCHEMA_TEXT = """\
# Corpus layout

manifest.tsv    one line per video: {fields} (tab-separated, sorted by video_id)
pairs.tsv       one line per paired utterance: identity, sentence, video_a, video_b, split
scene.json      analytic scene parameters (camera, bounds, colors), plus generator seed
landmarks/<video_id>.npy   (frames, 102) float64, 51 normalized (x, y) points,
                           31 eye-nose points then 20 mouth points
audio/<video_id>.npy       (frames, {audio_dim}) float32 per-frame audio features
emotion/<video_id>.npy     (frames, {emo_dim}) float32 per-frame emotion features
factors/<video_id>.npy     (frames, 6) float64 ground-truth columns
                           [speech s, speech rate ds, expression g, yaw, pitch, cam dist]
""".format(fields=", ".join(MANIFEST_FIELDS), audio_dim=AUDIO_FEATURE_DIM,
           emo_dim=EMOTION_FEATURE_DIM)


def _emotion_pair(spec: CorpusSpec, identity: int, sentence: int):
    e = len(spec.emotions)
    i = (identity + sentence) % e
    j = (i + 1 + sentence % (e - 1)) % e
    if j == i:
        j = (i + 1) % e
    return spec.emotions[i], spec.emotions[j]


def gen_corpus(spec: CorpusSpec, seed: int, out_dir) -> Path:
    """Write a complete corpus bundle under ``out_dir``.

    Each (identity, sentence) becomes a paired utterance: rendition "a"
    with one emotion and rendition "b" with another, sharing the same
    underlying speech profile, rendition "b" slowed by frame duplication.
    Raises if the spec would leave an identity with fewer than two videos
    (negative mining downstream needs a different video per identity).
    """
    out = Path(out_dir)
    if spec.sentences * 2 < 2:
        raise ValueError("each identity must end up with >= 2 videos")
    for sub in ("landmarks", "audio", "emotion", "factors"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    freqs, phases = audio_mixing(seed)
    w_emo, b_emo = emotion_lift(seed)
    videos, pairs = [], []
    for ident in range(spec.identities):
        offsets = identity_offsets(seed, ident)
        for sent in range(spec.sentences):
            rng = _rng(seed, ident, sent)
            s_base = speech_profile(spec.frames_per_video, rng)
            em_a, em_b = _emotion_pair(spec, ident, sent)
            split = "val" if sent >= spec.sentences - spec.val_sentences else "train"
            idx_b = tempo_warp_indices(spec.frames_per_video, spec.duplicate_fraction, rng)
            pair_ids = []
            for rend, em, s_track in (("a", em_a, s_base), ("b", em_b, s_base[idx_b])):
                vid = f"id{ident:02d}_s{sent:02d}{rend}"
                n = len(s_track)
                g_track = expression_track(n, em, _rng(seed, ident, sent, ord(rend), 1))
                poses = pose_track(n, _rng(seed, ident, sent, ord(rend), 2))
                sdot = finite_difference(s_track)
                lm = landmarks_from_factors(s_track, sdot, g_track, offsets)
                au = audio_features_from_speech(s_track, freqs, phases)
                emo = emotion_features_from_factors(g_track, s_track, w_emo, b_emo)
                factors = np.column_stack([s_track, sdot, g_track, poses])
                np.save(out / "landmarks" / f"{vid}.npy", lm)
                np.save(out / "audio" / f"{vid}.npy", au.astype(np.float32))
                np.save(out / "emotion" / f"{vid}.npy", emo.astype(np.float32))
                np.save(out / "factors" / f"{vid}.npy", factors)
                videos.append(VideoRecord(vid, ident, sent, em, rend, split, n))
                pair_ids.append(vid)
            pairs.append((ident, sent, pair_ids[0], pair_ids[1], split))

    videos.sort(key=lambda v: v.video_id)
    with open(out / "manifest.tsv", "w") as fh:
        fh.write("\t".join(MANIFEST_FIELDS) + "\n")
        for v in videos:
            fh.write(f"{v.video_id}\t{v.identity}\t{v.sentence}\t{v.emotion}\t"
                     f"{v.rendition}\t{v.split}\t{v.n_frames}\n")
    with open(out / "pairs.tsv", "w") as fh:
        fh.write("identity\tsentence\tvideo_a\tvideo_b\tsplit\n")
        for ident, sent, va, vb, split in sorted(pairs):
            fh.write(f"{ident}\t{sent}\t{va}\t{vb}\t{split}\n")
    scene_doc = {"scene": SynthScene().to_dict(), "seed": int(seed),
                 "spec": dataclasses.asdict(spec), "format_version": 1}
    scene_doc["spec"]["emotions"] = list(spec.emotions)
    with open(out / "scene.json", "w") as fh:
        json.dump(scene_doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "SCHEMA.md", "w") as fh:
        fh.write(SCHEMA_TEXT)
    return out
