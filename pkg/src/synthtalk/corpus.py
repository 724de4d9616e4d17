"""Read side of the corpus bundle written by :mod:`synthtalk.world`."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .world import MANIFEST_FIELDS, SynthScene, VideoRecord


@dataclass
class UtterancePair:
    identity: int
    sentence: int
    video_a: str
    video_b: str
    split: str


class Corpus:
    """Lazy loader over a generated corpus directory."""

    def __init__(self, root):
        self.root = Path(root)
        manifest = self.root / "manifest.tsv"
        if not manifest.exists():
            raise FileNotFoundError(f"no corpus manifest at {manifest}")
        self.videos: dict[str, VideoRecord] = {}
        with open(manifest) as fh:
            header = fh.readline().strip().split("\t")
            if header != MANIFEST_FIELDS:
                raise ValueError(f"unexpected manifest fields {header}")
            for line in fh:
                vid, ident, sent, emotion, rend, split, n = line.rstrip("\n").split("\t")
                self.videos[vid] = VideoRecord(vid, int(ident), int(sent), emotion,
                                               rend, split, int(n))
        self.pairs: list[UtterancePair] = []
        pairs_path = self.root / "pairs.tsv"
        if pairs_path.exists():
            with open(pairs_path) as fh:
                fh.readline()
                for line in fh:
                    ident, sent, va, vb, split = line.rstrip("\n").split("\t")
                    self.pairs.append(UtterancePair(int(ident), int(sent), va, vb, split))
        with open(self.root / "scene.json") as fh:
            doc = json.load(fh)
        self.scene = SynthScene.from_dict(doc["scene"])
        self.seed = doc["seed"]
        self._cache: dict[tuple, np.ndarray] = {}

    def _load(self, kind: str, video_id: str) -> np.ndarray:
        key = (kind, video_id)
        if key not in self._cache:
            if video_id not in self.videos:
                raise KeyError(f"unknown video {video_id!r}")
            self._cache[key] = np.load(self.root / kind / f"{video_id}.npy")
        return self._cache[key]

    def landmarks(self, video_id: str) -> np.ndarray:
        return self._load("landmarks", video_id)

    def audio(self, video_id: str) -> np.ndarray:
        return self._load("audio", video_id)

    def emotion(self, video_id: str) -> np.ndarray:
        return self._load("emotion", video_id)

    def factors(self, video_id: str) -> np.ndarray:
        """(frames, 6) columns [s, ds, g, yaw, pitch, dist]."""
        return self._load("factors", video_id)

    def video_ids(self, split: str | None = None, identity: int | None = None) -> list[str]:
        out = []
        for vid, rec in sorted(self.videos.items()):
            if split is not None and rec.split != split:
                continue
            if identity is not None and rec.identity != identity:
                continue
            out.append(vid)
        return out

    def identities(self) -> list[int]:
        return sorted({rec.identity for rec in self.videos.values()})

    def pairs_for(self, identity: int, split: str | None = None) -> list[UtterancePair]:
        return [p for p in self.pairs
                if p.identity == identity and (split is None or p.split == split)]
