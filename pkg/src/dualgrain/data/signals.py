"""Synthetic multichannel fault-signal generation and per-channel standardization.

Each class is a fixed mixture of sinusoids (its signature), drawn once per
class from ``class_signature_seed``.  On top of the signature every sample
receives a low-frequency drift whose distribution is identical for all
classes, plus white noise.  The drift carries structure shared across classes;
the signature carries the discriminative content.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError

SINUSOIDS_PER_CHANNEL = 3
DRIFT_FREQ_RANGE = (0.25, 1.5)  # cycles per window; well below signature band


@dataclass
class SignalSample:
    """One windowed multichannel signal with its class label."""

    values: np.ndarray  # shape (channels, length)
    label: int
    sample_id: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DomainError(f"values must be 2-D (channels x length), got shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise DomainError("values contain non-finite entries")
        if self.label < 0:
            raise DomainError(f"label must be non-negative, got {self.label}")

    @property
    def n_channels(self):
        return self.values.shape[0]

    @property
    def length(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class GeneratorSpec:
    n_channels: int = 52
    length: int = 128
    n_classes: int = 10
    class_signature_seed: int = 7
    noise_level: float = 0.1
    shared_drift_amp: float = 1.0
    informative_channels: int = None  # per class; None = every channel carries signature
    signature_amp: float = 1.0

    def __post_init__(self):
        if self.n_channels < 1 or self.length < 2 or self.n_classes < 1:
            raise DomainError("generator requires n_channels >= 1, length >= 2, n_classes >= 1")
        if self.noise_level < 0 or self.shared_drift_amp < 0:
            raise DomainError("noise_level and shared_drift_amp must be non-negative")
        if self.informative_channels is not None and not 1 <= self.informative_channels <= self.n_channels:
            raise DomainError("informative_channels must lie in [1, n_channels]")


def class_signature(spec, class_id):
    """Frequencies, phases and amplitudes of one class, deterministic in the spec.

    Returns three arrays of shape (n_channels, SINUSOIDS_PER_CHANNEL).  When the
    spec restricts informative channels, the remaining channels get zero
    amplitude and carry only drift and noise.
    """
    if not 0 <= class_id < spec.n_classes:
        raise DomainError(f"class_id {class_id} outside [0, {spec.n_classes})")
    rng = np.random.default_rng(np.random.SeedSequence([spec.class_signature_seed, class_id]))
    shape = (spec.n_channels, SINUSOIDS_PER_CHANNEL)
    # Signature band starts above the drift band so spectra stay separable.
    freqs = rng.uniform(3.0, max(4.0, spec.length / 4), size=shape)
    phases = rng.uniform(0.0, 2 * np.pi, size=shape)
    amps = spec.signature_amp * rng.uniform(0.5, 1.5, size=shape)
    if spec.informative_channels is not None:
        carriers = rng.choice(spec.n_channels, size=spec.informative_channels, replace=False)
        mask = np.zeros(spec.n_channels, dtype=bool)
        mask[carriers] = True
        amps = np.where(mask[:, None], amps, 0.0)
    return freqs, phases, amps


def generate_synthetic(spec, class_id, count, seed, start_id=0):
    """Generate `count` samples of one class; deterministic given (spec, seed)."""
    if count < 1:
        raise DomainError(f"count must be >= 1, got {count}")
    freqs, phases, amps = class_signature(spec, class_id)
    t = np.arange(spec.length) / spec.length
    # signature: (C, K, L) summed over K
    signature = (amps[:, :, None] * np.sin(2 * np.pi * freqs[:, :, None] * t + phases[:, :, None])).sum(axis=1)

    rng = np.random.default_rng(np.random.SeedSequence([seed, class_id]))
    samples = []
    for i in range(count):
        values = signature.copy()
        if spec.shared_drift_amp > 0:
            f_d = rng.uniform(*DRIFT_FREQ_RANGE)
            phase_d = rng.uniform(0.0, 2 * np.pi)
            # one drift waveform per sample, identical across channels
            values += spec.shared_drift_amp * np.sin(2 * np.pi * f_d * t + phase_d)
        if spec.noise_level > 0:
            values += rng.normal(0.0, spec.noise_level, size=values.shape)
        samples.append(SignalSample(values=values, label=class_id, sample_id=start_id + i))
    return samples


@dataclass
class ChannelScaler:
    """Per-channel standardization fitted on base-session data and frozen."""

    mean: np.ndarray = field(default=None)
    std: np.ndarray = field(default=None)

    def fit(self, samples):
        stacked = np.stack([s.values for s in samples])  # (N, C, L)
        self.mean = stacked.mean(axis=(0, 2))
        std = stacked.std(axis=(0, 2))
        self.std = np.where(std < 1e-12, 1.0, std)
        return self

    def transform(self, samples):
        if self.mean is None:
            raise DomainError("scaler not fitted")
        out = []
        for s in samples:
            values = (s.values - self.mean[:, None]) / self.std[:, None]
            out.append(SignalSample(values=values, label=s.label, sample_id=s.sample_id))
        return out

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(mean=np.asarray(d["mean"], dtype=np.float64), std=np.asarray(d["std"], dtype=np.float64))
