"""End-to-end orchestration of corpus generation, staged training,
rendering, interpolation sweeps, and evaluation.

Stage order is enforced through checkpoint presence: audio training needs
the landmark checkpoint, the radiance field needs the audio checkpoint and
the expression checkpoint of its identity, rendering needs the trained
field. Violations raise :class:`StageError` naming the missing stage.
"""

import shutil
import warnings
from pathlib import Path

import numpy as np
from PIL import Image

from . import audio as audio_mod
from . import expression as expr_mod
from . import field as field_mod
from . import landmarks as lm_mod
from . import train_utils as tu
from . import world
from .checkpoint import load_checkpoint, save_checkpoint
from .config import PipelineConfig, to_dict
from .corpus import Corpus
from .metrics import MetricReport, psnr, ssim


class StageError(RuntimeError):
    """A pipeline stage was invoked before its dependencies exist."""


def corpus_dir(out: Path) -> Path:
    return Path(out) / "corpus"


def ckpt_path(out: Path, stage: str) -> Path:
    return Path(out) / "checkpoints" / f"{stage}.ckpt"


def log_path(out: Path, stage: str) -> Path:
    return Path(out) / "logs" / f"{stage}.tsv"


def _require_corpus(out: Path) -> Corpus:
    try:
        return Corpus(corpus_dir(out))
    except FileNotFoundError as err:
        raise StageError(f"missing corpus: run the gen stage first ({err})") from err


def _require_ckpt(out: Path, stage: str):
    path = ckpt_path(out, stage)
    if not path.exists():
        raise StageError(f"missing dependency checkpoint for stage '{stage}': "
                         f"expected {path}; train the {stage} stage first")
    return load_checkpoint(path, expect_stage=stage)


def _resume_payload(out: Path, stage: str, resume: bool):
    if not resume:
        return None
    path = ckpt_path(out, stage)
    if not path.exists():
        raise StageError(f"cannot resume stage '{stage}': no checkpoint at {path}")
    return load_checkpoint(path, expect_stage=stage)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def run_gen(cfg: PipelineConfig, out: Path, force: bool = False) -> Path:
    """Generate the corpus bundle; refuses to clobber without ``force``."""
    dest = corpus_dir(out)
    if dest.exists() and any(dest.iterdir()):
        if not force:
            raise FileExistsError(f"{dest} exists and is not empty (use --force)")
        shutil.rmtree(dest)
    dest.mkdir(parents=True, exist_ok=True)
    world.gen_corpus(cfg.corpus, cfg.seed, dest)
    return dest


def run_train_landmark(cfg: PipelineConfig, out: Path, resume: bool = False) -> Path:
    corpus = _require_corpus(out)
    payload = _resume_payload(out, "landmark", resume)
    result = lm_mod.train_landmark_codec(corpus, cfg.landmark,
                                         tu.derived_seed(cfg.seed, "landmark"),
                                         resume=payload)
    tensors, meta = lm_mod.codec_tensors(result)
    path = ckpt_path(out, "landmark")
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(path, "landmark", tensors, meta)
    log_path(out, "landmark").parent.mkdir(parents=True, exist_ok=True)
    result.log.write(log_path(out, "landmark"))
    return path


def run_train_audio(cfg: PipelineConfig, out: Path, resume: bool = False) -> Path:
    corpus = _require_corpus(out)
    lm_tensors, _ = _require_ckpt(out, "landmark")
    codec = lm_mod.codec_from_tensors(lm_tensors)
    mouth_tracks = lm_mod.mouth_embedding_tracks(codec, corpus, corpus.video_ids())
    payload = _resume_payload(out, "audio", resume)
    result = audio_mod.train_audio_encoder(corpus, mouth_tracks, cfg.audio,
                                           tu.derived_seed(cfg.seed, "audio"),
                                           resume=payload)
    tensors, meta = audio_mod.encoder_tensors(result)
    meta["window"] = cfg.audio.window
    path = ckpt_path(out, "audio")
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(path, "audio", tensors, meta)
    log_path(out, "audio").parent.mkdir(parents=True, exist_ok=True)
    result.log.write(log_path(out, "audio"))
    return path


def run_train_expr(cfg: PipelineConfig, out: Path, resume: bool = False) -> list:
    corpus = _require_corpus(out)
    paths = []
    for identity in corpus.identities():
        stage = f"expr_id{identity:02d}"
        payload = _resume_payload(out, stage, resume) if resume else None
        result = expr_mod.train_expr_transformer(
            corpus, identity, cfg.expr, tu.derived_seed(cfg.seed, "expr"),
            resume=payload)
        tensors, meta = expr_mod.model_tensors(result)
        meta.update({"identity": identity, "window": cfg.expr.window,
                     "dropout": cfg.expr.dropout})
        path = ckpt_path(out, stage)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(path, stage, tensors, meta)
        log_path(out, stage).parent.mkdir(parents=True, exist_ok=True)
        result.log.write(log_path(out, stage))
        paths.append(path)
    return paths


def load_models(out: Path, identity: int):
    """Load the frozen landmark codec, audio encoder, and one identity's
    expression transformer."""
    lm_tensors, _ = _require_ckpt(out, "landmark")
    codec = lm_mod.codec_from_tensors(lm_tensors)
    au_tensors, au_meta = _require_ckpt(out, "audio")
    encoder = audio_mod.encoder_from_tensors(au_tensors, window=au_meta["window"])
    stage = f"expr_id{identity:02d}"
    ex_tensors, ex_meta = _require_ckpt(out, stage)
    expr = expr_mod.model_from_tensors(ex_tensors, window=ex_meta["window"],
                                       dropout=ex_meta["dropout"])
    return codec, encoder, expr


def compute_tracks(cfg: PipelineConfig, out: Path, video_ids=None) -> dict:
    """Per-frame conditioning tracks (audio and expression embeddings).

    Persisted as (frames, 64) matrices under tracks/; recomputed only for
    missing videos.
    """
    corpus = _require_corpus(out)
    if video_ids is None:
        video_ids = corpus.video_ids()
    tracks_dir = Path(out) / "tracks"
    (tracks_dir / "audio").mkdir(parents=True, exist_ok=True)
    (tracks_dir / "expr").mkdir(parents=True, exist_ok=True)
    encoders: dict[int, tuple] = {}
    tracks = {}
    for vid in video_ids:
        a_path = tracks_dir / "audio" / f"{vid}.npy"
        e_path = tracks_dir / "expr" / f"{vid}.npy"
        if a_path.exists() and e_path.exists():
            tracks[vid] = {"audio": np.load(a_path), "expr": np.load(e_path)}
            continue
        identity = corpus.videos[vid].identity
        if identity not in encoders:
            _, encoder, expr = load_models(out, identity)
            encoders[identity] = (encoder, expr)
        encoder, expr = encoders[identity]
        e_a = audio_mod.audio_embedding_track(encoder, corpus.audio(vid))
        e_e = expr_mod.extract_expression_track(expr, corpus.emotion(vid))
        np.save(a_path, e_a)
        np.save(e_path, e_e)
        tracks[vid] = {"audio": e_a, "expr": e_e}
    return tracks


def run_train_nerf(cfg: PipelineConfig, out: Path, resume: bool = False) -> Path:
    corpus = _require_corpus(out)
    _require_ckpt(out, "audio")
    _require_ckpt(out, f"expr_id{cfg.nerf.identity:02d}")
    video_ids = corpus.video_ids(identity=cfg.nerf.identity)
    tracks = compute_tracks(cfg, out, video_ids)
    cache = Path(out) / "cache" / "targets"
    cache.mkdir(parents=True, exist_ok=True)
    stage_name = f"nerf_id{cfg.nerf.identity:02d}"
    payload = _resume_payload(out, stage_name, resume)
    result = field_mod.train_nerf(corpus, tracks, cfg.nerf,
                                  tu.derived_seed(cfg.seed, "nerf"),
                                  resume=payload, target_cache_dir=cache)
    scene_meta = {"scene": corpus.scene.to_dict(), "cond_dim": cfg.nerf.cond_dim,
                  "resolution": cfg.nerf.resolution, "n_coarse": cfg.nerf.n_coarse,
                  "n_fine": cfg.nerf.n_fine, "identity": cfg.nerf.identity,
                  "background": list(corpus.scene.background)}
    tensors, meta = field_mod.nerf_tensors(result, scene_meta)
    path = ckpt_path(out, stage_name)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(path, stage_name, tensors, meta)
    log_path(out, stage_name).parent.mkdir(parents=True, exist_ok=True)
    result.log.write(log_path(out, stage_name))
    return path


# ---------------------------------------------------------------------------
# Rendering, interpolation, evaluation
# ---------------------------------------------------------------------------

def save_image(path, img: np.ndarray):
    Image.fromarray((np.clip(img, 0, 1) * 255.0 + 0.5).astype(np.uint8)).save(path)


def load_image(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.float64) / 255.0


def _load_nerf(cfg: PipelineConfig, out: Path):
    stage = f"nerf_id{cfg.nerf.identity:02d}"
    tensors, meta = _require_ckpt(out, stage)
    coarse, fine = field_mod.nerf_from_tensors(tensors, cond_dim=meta["scene"]["cond_dim"])
    scene = world.SynthScene.from_dict(meta["scene"]["scene"])
    return coarse, fine, scene, meta["scene"]


def run_render(cfg: PipelineConfig, out: Path, audio_source: str, expr_source: str,
               pose_source: str, frames_out, truth_out=None, max_frames=None) -> int:
    """Render frames conditioned on (possibly different) source videos.

    Writes frame_%05d.png; sources are truncated to their common length
    with a warning. With ``truth_out``, also writes the analytic oracle
    frames for the same factor combination.
    """
    corpus = _require_corpus(out)
    coarse, fine, scene, meta = _load_nerf(cfg, out)
    sources = [audio_source, expr_source, pose_source]
    tracks = compute_tracks(cfg, out, sorted(set(sources)))
    lengths = [corpus.videos[v].n_frames for v in sources]
    n = min(lengths)
    if len(set(lengths)) > 1:
        warnings.warn(f"sources have lengths {lengths}; truncating to {n}")
    if max_frames is not None:
        n = min(n, max_frames)
    frames_out = Path(frames_out)
    frames_out.mkdir(parents=True, exist_ok=True)
    if truth_out is not None:
        truth_out = Path(truth_out)
        truth_out.mkdir(parents=True, exist_ok=True)
    audio_track = tracks[audio_source]["audio"]
    expr_track = tracks[expr_source]["expr"]
    pose_factors = corpus.factors(pose_source)
    speech_factors = corpus.factors(audio_source)
    expr_factors = corpus.factors(expr_source)
    for t in range(n):
        img = field_mod.render_frame(coarse, fine, scene, audio_track[t],
                                     expr_track[t], pose_factors[t, 3:6],
                                     cfg.nerf.resolution, cfg.nerf.n_coarse,
                                     cfg.nerf.n_fine)
        save_image(frames_out / f"frame_{t:05d}.png", img)
        if truth_out is not None:
            gt = world.ground_truth_render(scene, speech_factors[t, 0],
                                           expr_factors[t, 2], pose_factors[t, 3:6],
                                           cfg.nerf.resolution)
            save_image(truth_out / f"frame_{t:05d}.png", gt)
    return n


def emotion_endpoint(cfg: PipelineConfig, out: Path, emotion: str) -> np.ndarray:
    """Mean expression embedding of the identity's first video in an emotion."""
    corpus = _require_corpus(out)
    vids = [v for v in corpus.video_ids(identity=cfg.nerf.identity)
            if corpus.videos[v].emotion == emotion]
    if not vids:
        raise ValueError(f"identity {cfg.nerf.identity} has no video with "
                         f"emotion {emotion!r}")
    tracks = compute_tracks(cfg, out, [vids[0]])
    return tracks[vids[0]]["expr"].mean(axis=0)


def run_interp(cfg: PipelineConfig, out: Path, emotion_a: str, emotion_b: str,
               steps: int, frames_out) -> int:
    """Render a linear expression-feature sweep at fixed audio and pose."""
    if steps < 2:
        raise ValueError("steps must be >= 2")
    corpus = _require_corpus(out)
    coarse, fine, scene, _ = _load_nerf(cfg, out)
    start = emotion_endpoint(cfg, out, emotion_a)
    end = emotion_endpoint(cfg, out, emotion_b)
    anchor_vid = corpus.video_ids(identity=cfg.nerf.identity)[0]
    anchor_t = corpus.videos[anchor_vid].n_frames // 2
    tracks = compute_tracks(cfg, out, [anchor_vid])
    audio_embed = tracks[anchor_vid]["audio"][anchor_t]
    pose = corpus.factors(anchor_vid)[anchor_t, 3:6]
    frames_out = Path(frames_out)
    frames_out.mkdir(parents=True, exist_ok=True)
    sweep = expr_mod.interpolate_expression(start, end, steps)
    for i, expr_embed in enumerate(sweep):
        img = field_mod.render_frame(coarse, fine, scene, audio_embed, expr_embed,
                                     pose, cfg.nerf.resolution, cfg.nerf.n_coarse,
                                     cfg.nerf.n_fine)
        save_image(frames_out / f"frame_{i:05d}.png", img)
    return steps


class ThresholdViolation(RuntimeError):
    """An eval threshold configured as a CI gate was violated."""


def run_eval(cfg: PipelineConfig, rendered_dir, truth_dir, report_dir) -> MetricReport:
    """Compare rendered frames against truth frames; write the report.

    Raises ThresholdViolation (CLI exit code 2) when a configured metric
    floor is not met.
    """
    rendered = sorted(Path(rendered_dir).glob("frame_*.png"))
    truth = sorted(Path(truth_dir).glob("frame_*.png"))
    if len(rendered) != len(truth):
        raise ValueError(f"frame-count mismatch: {len(rendered)} rendered vs "
                         f"{len(truth)} truth")
    if not rendered:
        raise ValueError("no frames found to evaluate")
    psnrs, ssims = [], []
    for rp, tp in zip(rendered, truth):
        a = load_image(rp)
        b = load_image(tp)
        psnrs.append(psnr(a, b))
        ssims.append(ssim(a, b))
    report = MetricReport(config=to_dict(cfg), seed=cfg.seed)
    mean_psnr = float(np.mean(psnrs))
    report.add("psnr_mean", mean_psnr, "dB",
               saturated=any(p >= 100.0 for p in psnrs))
    report.add("ssim_mean", float(np.mean(ssims)), "unitless")
    report.add("frames", float(len(rendered)), "count")
    report_dir = Path(report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    report.write_text(report_dir / "report.txt")
    report.write_json(report_dir / "report.json")
    if cfg.eval.psnr_min is not None and mean_psnr < cfg.eval.psnr_min:
        raise ThresholdViolation(f"psnr_mean {mean_psnr:.3f} dB below floor "
                                 f"{cfg.eval.psnr_min}")
    if cfg.eval.ssim_min is not None and float(np.mean(ssims)) < cfg.eval.ssim_min:
        raise ThresholdViolation(f"ssim_mean {float(np.mean(ssims)):.4f} below floor "
                                 f"{cfg.eval.ssim_min}")
    return report
