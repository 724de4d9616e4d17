"""Synthetic talking-head pipeline.

Self-supervised audio/lip alignment, expression/speech disentanglement,
and a conditional dynamic radiance field, trained and verified end to end
on a synthetic corpus with known ground-truth factors.
"""

__version__ = "0.1.0"
