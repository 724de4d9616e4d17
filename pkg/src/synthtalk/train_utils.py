"""Shared trainer plumbing: deterministic seeding and optimizer snapshots.

All stochastic choices in a training step are drawn from generators
derived from (seed, step), never from ambient RNG state. That makes every
run reproducible and lets a resumed run continue bit-exactly: step k of a
resumed trainer consumes exactly the randomness step k of an uninterrupted
run would have.
"""

import numpy as np
import torch


def derived_seed(seed: int, *key) -> int:
    ints = [int(seed)] + [k if isinstance(k, int) else int.from_bytes(str(k).encode(), "little") % (2**31)
                          for k in key]
    return int(np.random.SeedSequence(ints).generate_state(1, np.uint64)[0] % (2**63))


def step_rng(seed: int, *key) -> np.random.Generator:
    return np.random.default_rng(derived_seed(seed, *key))


def seed_torch(seed: int, *key):
    torch.manual_seed(derived_seed(seed, *key))


def exp_decay_lr(lr0: float, lr1: float, step: int, total: int) -> float:
    """Exponential interpolation from lr0 (step 0) to lr1 (last step)."""
    if total <= 1:
        return lr0
    frac = min(step / (total - 1), 1.0)
    return float(lr0 * (lr1 / lr0) ** frac)


def set_lr(optimizer, lr: float, group: int = 0):
    optimizer.param_groups[group]["lr"] = lr


def optimizer_tensors(optimizer) -> dict:
    """Flatten torch optimizer state into name -> numpy array."""
    out = {}
    sd = optimizer.state_dict()
    for pid, state in sd["state"].items():
        for name, value in state.items():
            if isinstance(value, torch.Tensor):
                out[f"opt.{pid}.{name}"] = value.detach().cpu().numpy()
            else:
                out[f"opt.{pid}.{name}"] = np.asarray(value)
    return out


def load_optimizer_tensors(optimizer, tensors: dict):
    """Restore state saved by :func:`optimizer_tensors` into a fresh optimizer."""
    state: dict = {}
    for key, value in tensors.items():
        if not key.startswith("opt."):
            continue
        _, pid, name = key.split(".", 2)
        entry = state.setdefault(int(pid), {})
        arr = np.asarray(value)
        if name == "step":
            entry[name] = torch.tensor(arr.copy())
        else:
            entry[name] = torch.from_numpy(arr.copy())
    sd = optimizer.state_dict()
    sd["state"] = state
    optimizer.load_state_dict(sd)


class TrainLog:
    """Per-interval loss records, persisted as TSV."""

    def __init__(self):
        self.records: list[tuple[int, float]] = []

    def add(self, step: int, loss: float):
        self.records.append((int(step), float(loss)))

    def write(self, path):
        with open(path, "w") as fh:
            fh.write("step\tloss\n")
            for step, loss in self.records:
                fh.write(f"{step}\t{loss:.10g}\n")
