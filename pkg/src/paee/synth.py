"""Synthetic recordings with a known energy-expenditure mechanism.

Each subject follows a random schedule of activity segments.  Accelerometer
channels are a per-segment gravity offset plus band-limited noise whose
amplitude scales with activity intensity, so window dispersion tracks
intensity while window means mostly see orientation.  Metabolic demand is
affine in intensity with subject-specific resting level and gain driven by
the static attributes; the measured EEm is demand passed through a
first-order lag, sampled at breath times and perturbed by Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import signal

from .data import (
    ACCEL_RANGE_G,
    NOMINAL_SR,
    AccelStream,
    Activity,
    ActivityAnnotation,
    BreathRecord,
    Location,
    ParticipantProfile,
    Place,
    Recording,
    Sex,
    WEIR_CO2,
    WEIR_O2,
)
from .errors import InvalidConfig

DEFAULT_INTENSITY = {
    Activity.LYING_DOWN: 0.05,
    Activity.SITTING: 0.10,
    Activity.STANDING: 0.25,
    Activity.HOUSEHOLD: 0.45,
    Activity.JUMPING: 0.55,
    Activity.WALKING: 0.65,
    Activity.CYCLING: 0.95,
}

# movement amplitude per unit intensity (g), per body location
DEFAULT_AMPLITUDE = {
    Location.WRIST: {
        Activity.LYING_DOWN: 0.9, Activity.SITTING: 0.9, Activity.STANDING: 1.0, Activity.HOUSEHOLD: 1.1,
        Activity.JUMPING: 1.1, Activity.WALKING: 1.0, Activity.CYCLING: 0.9,
    },
    Location.ANKLE: {
        Activity.LYING_DOWN: 0.5, Activity.SITTING: 0.5, Activity.STANDING: 0.7, Activity.HOUSEHOLD: 0.7,
        Activity.JUMPING: 1.4, Activity.WALKING: 1.3, Activity.CYCLING: 1.2,
    },
}  # fmt: skip

INDOOR_ACTIVITIES = (
    Activity.LYING_DOWN,
    Activity.SITTING,
    Activity.STANDING,
    Activity.HOUSEHOLD,
    Activity.WALKING,
    Activity.CYCLING,
    Activity.JUMPING,
)
OUTDOOR_ACTIVITIES = (Activity.WALKING, Activity.CYCLING, Activity.STANDING)

RER = 0.85  # vco2 / vo2 used to back out gas volumes from EEm


@dataclass(frozen=True)
class StaticEffects:
    """Resting level and gain (kcal/min per unit intensity) as functions of the profile.

    Both scale with weight / 75 kg; age lowers them, male sex and height raise them.
    """

    rest: float = 1.2
    gain: float = 6.5
    male_rest: float = 0.15
    male_gain: float = 0.10
    age_rest: float = -0.01  # kcal/min per year above 72
    age_gain: float = -0.006  # fraction per year above 72
    height_rest: float = 0.005  # kcal/min per cm above 168

    def rest_level(self, p: ParticipantProfile) -> float:
        male = p.sex is Sex.MALE
        return self.rest * (p.weight / 75.0) * (1 + self.male_rest * male) + self.age_rest * (p.age - 72) + self.height_rest * (p.height - 168)

    def gain_level(self, p: ParticipantProfile) -> float:
        male = p.sex is Sex.MALE
        return self.gain * (p.weight / 75.0) * (1 + self.male_gain * male) * (1 + self.age_gain * (p.age - 72))


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 10
    indoor_only_fraction: float = 0.3
    seed: int = 0
    duration_sec: int = 1500  # indoor part
    outdoor_sec: int = 600  # appended for subjects with outdoor data
    segment_sec: tuple = (40, 180)
    lag_tau: float = 20.0
    noise_sd: float = 0.4
    sr: float = NOMINAL_SR
    band_hz: tuple = (3.0, 8.0)
    intensity: Mapping = field(default_factory=lambda: dict(DEFAULT_INTENSITY))
    amplitude: Mapping = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_AMPLITUDE.items()})
    effects: StaticEffects = StaticEffects()
    indoor_activities: tuple = INDOOR_ACTIVITIES
    outdoor_activities: tuple = OUTDOOR_ACTIVITIES

    def __post_init__(self):
        if self.n_subjects < 4:
            raise InvalidConfig(f"n_subjects={self.n_subjects}; leave-one-subject-out needs at least 4")
        if not 0.0 <= self.indoor_only_fraction <= 1.0:
            raise InvalidConfig("indoor_only_fraction must lie in [0, 1]")
        if not self.lag_tau > 0:
            raise InvalidConfig("lag_tau must be positive")
        if self.noise_sd < 0 or self.duration_sec < 60 or self.outdoor_sec < 0 or not self.sr > 0:
            raise InvalidConfig("invalid duration, noise or sampling rate")
        lo, hi = self.segment_sec
        if not 0 < lo <= hi:
            raise InvalidConfig("segment_sec must be an increasing positive pair")
        if not 0 < self.band_hz[0] < self.band_hz[1] < self.sr / 2:
            raise InvalidConfig("band_hz must lie below the Nyquist frequency")


@dataclass(frozen=True, eq=False)
class SyntheticSubject:
    recording: Recording
    intensity: np.ndarray  # per second
    activity: np.ndarray  # per second, Activity values
    demand: np.ndarray  # per second, kcal/min
    lagged: np.ndarray  # per second, demand after the lag filter
    breath_truth: np.ndarray  # noiseless EEm at each breath

    def bayes_rmse(self) -> float:
        eem = self.recording.breath_eem
        return float(np.sqrt(np.mean((eem - self.breath_truth) ** 2)))


def _profile(rng, sid, male, has_outdoor):
    age = round(float(rng.uniform(60, 85)), 1)
    height = round(float(rng.normal(175, 7) if male else rng.normal(162, 6)), 1)
    bmi_target = rng.uniform(23, 35)
    weight = round(float(bmi_target * (height / 100) ** 2), 1)
    return ParticipantProfile(sid, age, Sex.MALE if male else Sex.FEMALE, height, weight, has_outdoor=has_outdoor)


def _schedule(rng, cfg, total, indoor_sec):
    """Per-second activity, intensity and outdoor flag."""
    acts = np.empty(total, dtype=object)
    inten = np.empty(total)
    outdoor = np.zeros(total, dtype=bool)
    t, prev = 0, None
    lo, hi = cfg.segment_sec
    while t < total:
        out = t >= indoor_sec
        pool = [a for a in (cfg.outdoor_activities if out else cfg.indoor_activities) if a is not prev]
        act = pool[rng.integers(len(pool))]
        dur = int(rng.integers(lo, hi + 1))
        if act is Activity.JUMPING:
            dur = min(dur, 30)
        end = min(t + dur, indoor_sec if not out else total)
        acts[t:end] = act
        inten[t:end] = cfg.intensity[act] * rng.uniform(0.85, 1.15)
        outdoor[t:end] = out
        t, prev = end, act
    return acts, inten, outdoor


def _band_noise(rng, n, cfg):
    sos = signal.butter(4, cfg.band_hz, btype="bandpass", fs=cfg.sr, output="sos")
    x = signal.sosfiltfilt(sos, rng.standard_normal((n, 3)), axis=0)
    return x / x.std(axis=0)


def _stream(rng, cfg, loc, acts, inten, t):
    sec = np.minimum(t.astype(np.int64), len(acts) - 1)
    # gravity direction per segment
    seg_start = np.flatnonzero(np.r_[True, acts[1:] != acts[:-1]])
    seg_of_sec = np.searchsorted(seg_start, np.arange(len(acts)), side="right") - 1
    g = rng.standard_normal((len(seg_start), 3))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    amp_scale = np.array([cfg.amplitude[loc][a] for a in acts])
    jitter = rng.uniform(0.9, 1.1, size=len(seg_start))[seg_of_sec]
    amp = 0.005 + amp_scale * inten * jitter
    xyz = g[seg_of_sec[sec]] + amp[sec, None] * _band_noise(rng, len(t), cfg)
    np.clip(xyz, -ACCEL_RANGE_G, ACCEL_RANGE_G, out=xyz)
    return AccelStream(loc, t, xyz, cfg.sr)


def _lag(demand, tau):
    alpha = 1.0 - np.exp(-1.0 / tau)
    out = np.empty_like(demand)
    s = demand[0]
    for k, d in enumerate(demand):
        s = alpha * d + (1.0 - alpha) * s
        out[k] = s
    return out


def _breath_times(rng, lagged_intensity, total):
    rate = 0.18 + 0.3 * lagged_intensity
    times = []
    t = float(rng.uniform(0.0, 2.0))
    while t < total - 1e-9:
        times.append(t)
        t += float(rng.uniform(0.8, 1.2)) / rate[min(int(t), total - 1)]
    return np.array(times)


def generate_subject(cfg: SynthConfig, index: int, has_outdoor: bool, seed_seq: np.random.SeedSequence) -> SyntheticSubject:
    rng = np.random.default_rng(seed_seq)
    sid = f"S{index + 1:02d}"
    prof = _profile(rng, sid, male=index % 2 == 1, has_outdoor=has_outdoor)
    total = cfg.duration_sec + (cfg.outdoor_sec if has_outdoor else 0)
    acts, inten, outdoor = _schedule(rng, cfg, total, cfg.duration_sec)
    n = int(round(total * cfg.sr))
    t = np.arange(n) / cfg.sr
    wrist = _stream(rng, cfg, Location.WRIST, acts, inten, t)
    ankle = _stream(rng, cfg, Location.ANKLE, acts, inten, t)

    demand = cfg.effects.rest_level(prof) + cfg.effects.gain_level(prof) * inten
    lagged = _lag(demand, cfg.lag_tau)
    bt = _breath_times(rng, _lag(inten, cfg.lag_tau), total)
    truth = lagged[bt.astype(np.int64)]
    eem = np.maximum(truth + rng.normal(0.0, cfg.noise_sd, size=len(bt)) if cfg.noise_sd > 0 else truth, 0.0)
    breaths = []
    for ti, e in zip(bt.tolist(), eem.tolist()):
        vo2 = e / (WEIR_O2 + WEIR_CO2 * RER) * 1000.0
        breaths.append(BreathRecord(ti, vo2, vo2 * RER, e))
    annotations = [
        ActivityAnnotation(float(k), acts[k], Place.OUTDOOR if outdoor[k] else Place.INDOOR) for k in range(total)
    ]
    rec = Recording(prof, wrist, ankle, breaths, annotations, subject_id=sid)
    return SyntheticSubject(rec, inten, acts, demand, lagged, truth)


def generate_subjects(cfg: SynthConfig) -> list[SyntheticSubject]:
    """Recordings plus their latent ground truth; each subject has its own derived seed."""
    master = np.random.SeedSequence(cfg.seed)
    children = master.spawn(cfg.n_subjects + 1)
    n_indoor = int(round(cfg.indoor_only_fraction * cfg.n_subjects))
    # every fold needs one validator of each kind besides the held-out subject
    n_indoor = min(max(n_indoor, 2), cfg.n_subjects - 2)
    perm = np.random.default_rng(children[-1]).permutation(cfg.n_subjects)
    indoor_only = set(perm[:n_indoor].tolist())
    return [generate_subject(cfg, i, i not in indoor_only, children[i]) for i in range(cfg.n_subjects)]


def generate_dataset(cfg: SynthConfig) -> list[Recording]:
    return [s.recording for s in generate_subjects(cfg)]
