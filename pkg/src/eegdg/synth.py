"""Seeded synthetic multi-subject benchmark.

Feature-level benchmark: labels come from a fixed random smooth nonlinearity
of a small informative feature subset, squashed through the same clamped
logistic used for the drowsiness index (long mass at zero). Each subject adds
its own offsets to the features (largest on the informative dimensions, so
subject identity leaks through the very features a model must rely on), a
monotone distortion plus noise to the labels (differing conditional
distributions), and a subject-specific linear label term on the uninformative
dimensions that pooled training can overfit but that does not transfer.
Raw-signal fixtures are sums of sinusoids with a planted dominant band per
channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .sigproc import ALPHA_BAND, THETA_BAND, RawRecording, TrialTable, feature_times
from .util import substream


@dataclass
class SynthSpec:
    S: int = 6  # subjects
    N: int = 600  # trials per subject
    d: int = 60
    informative_set: tuple[int, ...] = (2, 9, 17, 23, 31, 40, 48, 55)
    shift: float = 0.5  # sd of per-subject offsets on uninformative features
    informative_shift: float = 0.7  # sd of per-subject offsets on informative features
    label_noise_sd: float = 0.05
    conditional_offset: float = 0.06  # subject label offset ~ U(-a, a)
    conditional_scale: float = 0.15  # subject label scale ~ U(1-a, 1+a)
    spurious_sd: float = 0.15  # sd of the subject-specific label term on noise dims
    feature_mean: float = 20.0  # dB-like feature magnitude
    feature_scale: float = 15.0
    seed: int = 0

    def __post_init__(self):
        if not self.informative_set:
            raise ConfigurationError("informative_set must be nonempty")
        if any(i < 0 or i >= self.d for i in self.informative_set):
            raise ConfigurationError("informative_set indices out of range")
        if self.label_noise_sd < 0 or self.shift < 0:
            raise ConfigurationError("noise/shift magnitudes must be >= 0")


class _LatentFunction:
    """Fixed random one-hidden-layer tanh network mapping the informative
    features to a raw score."""

    N_HIDDEN = 16

    def __init__(self, n_inputs: int, rng: np.random.Generator):
        self.A = rng.normal(0.0, 1.0 / np.sqrt(n_inputs), (self.N_HIDDEN, n_inputs))
        self.b = rng.normal(0.0, 0.5, self.N_HIDDEN)
        self.v = rng.normal(0.0, 1.0 / np.sqrt(self.N_HIDDEN), self.N_HIDDEN)

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return np.tanh(u @ self.A.T + self.b) @ self.v


def _squash(z: np.ndarray) -> np.ndarray:
    # same clamped logistic shape as the drowsiness index: mass piles at 0
    e = np.exp(-z)
    return np.maximum(0.0, (1.0 - e) / (1.0 + e))


def gen_feature_benchmark(spec: SynthSpec):
    """Per-subject trial tables plus a ground-truth descriptor.

    Deterministic given spec.seed; subjects use derived sub-streams and are
    named s00, s01, ...
    """
    master = substream(spec.seed, "benchmark", "latent")
    inf = np.array(sorted(spec.informative_set))
    noise_dims = np.array([i for i in range(spec.d) if i not in set(inf)])
    g = _LatentFunction(len(inf), master)
    # scale the raw score so squash() spreads labels over [0, 1)
    probe = g(master.normal(size=(4096, len(inf))))
    z_scale = 2.5 / max(probe.std(), 1e-9)
    z_center = float(np.median(probe))

    tables = []
    descriptor = {
        "seed": spec.seed,
        "S": spec.S,
        "N": spec.N,
        "d": spec.d,
        "informative_set": inf.tolist(),
        "subjects": {},
    }
    for s in range(spec.S):
        sid = f"s{s:02d}"
        rng = substream(spec.seed, "benchmark", "subject", s)
        offsets = np.zeros(spec.d)
        offsets[noise_dims] = rng.normal(0.0, spec.shift, len(noise_dims))
        offsets[inf] = rng.normal(0.0, spec.informative_shift, len(inf))
        lo = rng.uniform(-spec.conditional_offset, spec.conditional_offset)
        ls = rng.uniform(1.0 - spec.conditional_scale, 1.0 + spec.conditional_scale)

        u = rng.normal(size=(spec.N, len(inf)))
        x = rng.normal(size=(spec.N, spec.d))
        x[:, inf] = u
        eps_noise = x[:, noise_dims].copy()  # subject's own noise-dim fluctuations
        x += offsets
        x = spec.feature_mean + spec.feature_scale * x
        # subject-specific linear label term on the uninformative dims: sources
        # can fit it (it is real signal within a subject) but it does not
        # transfer to an unseen subject
        c = rng.normal(0.0, spec.spurious_sd / np.sqrt(len(noise_dims)),
                       len(noise_dims))
        y0 = _squash(z_scale * (g(u) - z_center))
        y = (ls * y0 + lo + eps_noise @ c
             + rng.normal(0.0, spec.label_noise_sd, spec.N))
        y = np.clip(y, 0.0, 1.0)
        times = feature_times(spec.N)
        tables.append(TrialTable(subject_id=sid, features=x, labels=y,
                                 trial_times=times))
        descriptor["subjects"][sid] = {
            "feature_offsets": offsets.tolist(),
            "label_offset": float(lo),
            "label_scale": float(ls),
            "spurious_coef": c.tolist(),
        }
    return tables, descriptor


@dataclass
class RawFixture:
    recording: RawRecording
    band_power: dict  # channel index -> {"theta": power, "alpha": power}
    dominant_band: dict  # channel index -> "theta" | "alpha" | None


def gen_raw_fixture(duration_s: float, channels: int,
                    components: list[tuple[float, float, list[int] | None]],
                    sample_rate_hz: float = 250.0, noise_sd: float = 0.0,
                    seed: int = 0) -> RawFixture:
    """Sum-of-sinusoids recording plus the analytic per-channel band powers.

    Each component is (freq_hz, amplitude, channel_indices-or-None-for-all);
    analytic power of a sinusoid is amplitude^2 / 2.
    """
    nyq = sample_rate_hz / 2
    for freq, _, _ in components:
        if freq >= nyq:
            raise ConfigurationError(f"component at {freq} Hz is at or above Nyquist")
    n = int(round(duration_s * sample_rate_hz))
    t = np.arange(n) / sample_rate_hz
    rng = substream(seed, "raw_fixture")
    samples = rng.normal(0.0, noise_sd, (channels, n)) if noise_sd > 0 else np.zeros((channels, n))
    band_power = {ch: {"theta": 0.0, "alpha": 0.0} for ch in range(channels)}
    for freq, amp, mask in components:
        wave = amp * np.sin(2 * np.pi * freq * t)
        targets = range(channels) if mask is None else mask
        for ch in targets:
            samples[ch] += wave
            if THETA_BAND[0] <= freq <= THETA_BAND[1]:
                band_power[ch]["theta"] += amp**2 / 2
            elif ALPHA_BAND[0] <= freq <= ALPHA_BAND[1]:
                band_power[ch]["alpha"] += amp**2 / 2
    dominant = {}
    for ch, powers in band_power.items():
        if powers["theta"] == powers["alpha"] == 0.0:
            dominant[ch] = None
        else:
            dominant[ch] = "theta" if powers["theta"] > powers["alpha"] else "alpha"
    names = [f"ch{c:02d}" for c in range(channels)]
    rec = RawRecording(samples, sample_rate_hz, names, None)
    return RawFixture(recording=rec, band_power=band_power, dominant_band=dominant)
