"""Segment-shuffle augmentation and paired-view batch construction."""

import math

import numpy as np

from ..errors import DomainError
from .signals import SignalSample

DEFAULT_SEGMENT_FRAC = 0.2


def segment_shuffle_augment(sample, frac=DEFAULT_SEGMENT_FRAC, seed=0):
    """Permute one contiguous window of ceil(frac*L) steps, same order on all channels."""
    if not 0 < frac <= 1:
        raise DomainError(f"frac must be in (0, 1], got {frac}")
    length = sample.length
    seg_len = math.ceil(frac * length)
    rng = np.random.default_rng(seed)
    offset = int(rng.integers(0, length - seg_len + 1))
    perm = rng.permutation(seg_len)
    values = sample.values.copy()
    values[:, offset : offset + seg_len] = values[:, offset + perm]
    return SignalSample(values=values, label=sample.label, sample_id=sample.sample_id)


def make_views(batch, seed, frac=DEFAULT_SEGMENT_FRAC):
    """Two independently augmented views per sample; views 2i and 2i+1 share origin.

    Returns (views, origin_index) where origin_index[j] is the position in
    `batch` that view j was derived from.
    """
    if not batch:
        raise DomainError("batch must be non-empty")
    rng = np.random.default_rng(seed)
    views, origin = [], []
    for i, sample in enumerate(batch):
        for _ in range(2):
            child_seed = int(rng.integers(0, 2**63 - 1))
            views.append(segment_shuffle_augment(sample, frac=frac, seed=child_seed))
            origin.append(i)
    return views, origin
