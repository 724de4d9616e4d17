"""Self-describing checkpoint archives shared by every trainable stage.

A checkpoint is a single zip file holding one ``.npy`` member per tensor
(keyed by layer/state name) plus a ``meta.json`` member carrying the
format version, the stage name, and any stage metadata (for the radiance
field: scene bounds, background color, conditioning width). Member
timestamps are pinned so that identical contents produce identical bytes.
"""

import io
import json
import zipfile
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)  # fixed zip timestamp for reproducible bytes


def save_checkpoint(path, stage: str, tensors: dict, meta: dict | None = None):
    """Write tensors and metadata to ``path`` atomically.

    :param tensors: mapping of name -> array-like; names may not collide
        with the reserved ``meta.json`` member.
    """
    path = Path(path)
    meta_doc = {"format_version": FORMAT_VERSION, "stage": stage,
                "tensors": sorted(tensors), "meta": meta or {}}
    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        info = zipfile.ZipInfo("meta.json", date_time=_EPOCH)
        zf.writestr(info, json.dumps(meta_doc, indent=2, sort_keys=True))
        for name in sorted(tensors):
            if name == "meta.json":
                raise ValueError("tensor name 'meta.json' is reserved")
            buf = io.BytesIO()
            np.save(buf, np.asarray(tensors[name]))
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH), buf.getvalue())
    tmp.replace(path)


def load_checkpoint(path, expect_stage: str | None = None):
    """Read a checkpoint; returns (tensors dict, meta dict).

    Raises on missing files, wrong format versions, or (when
    ``expect_stage`` is given) a stage mismatch — the pipeline uses the
    stage field to refuse out-of-order training.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with zipfile.ZipFile(path) as zf:
        meta_doc = json.loads(zf.read("meta.json"))
        if meta_doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format {meta_doc.get('format_version')}")
        if expect_stage is not None and meta_doc.get("stage") != expect_stage:
            raise ValueError(f"expected a {expect_stage!r} checkpoint, found "
                             f"{meta_doc.get('stage')!r} in {path}")
        tensors = {}
        for name in meta_doc["tensors"]:
            tensors[name] = np.load(io.BytesIO(zf.read(f"{name}.npy")))
    return tensors, meta_doc["meta"]


def state_dict_to_tensors(state_dict) -> dict:
    return {k: v.detach().cpu().numpy() for k, v in state_dict.items()}


def tensors_to_state_dict(tensors: dict):
    import torch

    return {k: torch.from_numpy(np.asarray(v).copy()) for k, v in tensors.items()}
