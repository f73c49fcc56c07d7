import numpy as np
import pytest

from paee.data import Activity, Location, load_dataset, write_dataset
from paee.errors import InvalidConfig
from paee.preprocess import AggregationFn, resample_stream
from paee.synth import StaticEffects, SynthConfig, generate_dataset, generate_subjects

SMALL = dict(n_subjects=4, duration_sec=300, outdoor_sec=120, seed=5)


@pytest.fixture(scope="module")
def subjects():
    return generate_subjects(SynthConfig(**SMALL))


def test_config_validation():
    with pytest.raises(InvalidConfig):
        SynthConfig(n_subjects=3)
    with pytest.raises(InvalidConfig):
        SynthConfig(indoor_only_fraction=1.5)
    with pytest.raises(InvalidConfig):
        SynthConfig(lag_tau=0.0)


def test_deterministic(subjects):
    again = generate_subjects(SynthConfig(**SMALL))
    for a, b in zip(subjects, again):
        ra, rb = a.recording, b.recording
        assert ra.profile == rb.profile
        assert ra.wrist.xyz.tobytes() == rb.wrist.xyz.tobytes()
        assert ra.breath_eem.tobytes() == rb.breath_eem.tobytes()
        assert ra.annotations == rb.annotations


def test_profiles_and_split(subjects):
    profiles = [s.recording.profile for s in subjects]
    assert [p.id for p in profiles] == ["S01", "S02", "S03", "S04"]
    for p in profiles:
        assert 60 <= p.age <= 85
        assert 23 - 0.5 <= p.bmi <= 35 + 0.5  # rounding of height/weight
    n_out = sum(p.has_outdoor for p in profiles)
    assert n_out == 2
    for s in subjects:
        rec = s.recording
        flags = rec.outdoor_at(rec.breath_t)
        assert flags.any() == rec.profile.has_outdoor
        assert rec.end == pytest.approx(300 + (120 if rec.profile.has_outdoor else 0), abs=0.02)


def test_stream_shapes(subjects):
    rec = subjects[0].recording
    assert rec.wrist.nominal_sr == 83.0
    assert len(rec.wrist) == len(rec.ankle) == int(round(rec.end * 83)) + 1 or len(rec.wrist) == int(round((rec.end + 1 / 83) * 83))
    assert np.all(np.abs(rec.wrist.xyz) <= 8.0)
    assert np.all(np.diff(rec.breath_t) > 0)
    assert len(rec.annotations) == int(round(rec.end + 1 / 83))


def test_breath_rate(subjects):
    gaps = np.concatenate([np.diff(s.recording.breath_t) for s in subjects])
    assert 0.2 < 1 / gaps.mean() < 0.45


def test_noise_free_limit():
    cfg = SynthConfig(n_subjects=4, duration_sec=200, outdoor_sec=0, noise_sd=0.0, lag_tau=1e-6, seed=2)
    for s in generate_subjects(cfg):
        sec = s.recording.breath_t.astype(int)
        assert np.allclose(s.recording.breath_eem, s.demand[sec], rtol=0, atol=1e-9)
        p = s.recording.profile
        eff = StaticEffects()
        assert np.allclose(s.demand, eff.rest_level(p) + eff.gain_level(p) * s.intensity)


def _window_stats(s, fn, win=10.0):
    rec = s.recording
    n = int(rec.end // win)
    vals = resample_stream(rec.wrist, 1 / win, fn, 0.0, n * win)
    inten = s.intensity[: n * int(win)].reshape(n, int(win)).mean(axis=1)
    return vals, inten


def _segments(s):
    change = np.flatnonzero(np.r_[True, np.diff(s.intensity) != 0, True])
    return list(zip(change[:-1], change[1:]))


def test_sd_tracks_segment_intensity(subjects):
    for s in subjects:
        rec = s.recording
        sds, inten = [], []
        for a, b in _segments(s):
            m = (rec.wrist.t >= a) & (rec.wrist.t < b)
            sds.append(np.linalg.norm(rec.wrist.xyz[m].std(axis=0)))
            inten.append(s.intensity[a])
        r = np.corrcoef(sds, inten)[0, 1]
        assert r > 0.9, r


def _multiple_r(x, y):
    a = np.column_stack([x, np.ones(len(x))])
    fit = a @ np.linalg.lstsq(a, y, rcond=None)[0]
    return np.corrcoef(fit, y)[0, 1]


def test_mean_carries_less_than_sd():
    # pooled over subjects so that enough segments (and gravity draws) enter
    subs = generate_subjects(SynthConfig(n_subjects=8, duration_sec=900, outdoor_sec=300, seed=1))
    stats = {fn: [] for fn in (AggregationFn.SD, AggregationFn.MEAN)}
    inten = []
    for s in subs:
        for fn in stats:
            vals, it = _window_stats(s, fn)
            stats[fn].append(vals)
        inten.append(it)
    inten = np.concatenate(inten)
    r_sd = _multiple_r(np.concatenate(stats[AggregationFn.SD]), inten)
    r_mean = _multiple_r(np.concatenate(stats[AggregationFn.MEAN]), inten)
    assert r_sd > 0.9 and r_sd - r_mean > 0.3, (r_sd, r_mean)


def test_activity_ordering():
    subs = generate_subjects(SynthConfig(n_subjects=6, duration_sec=1500, outdoor_sec=300, seed=3))
    means = {}
    for a in (Activity.CYCLING, Activity.WALKING, Activity.SITTING):
        means[a] = np.mean([s.lagged[s.activity == a].mean() for s in subs if np.any(s.activity == a)])
    assert means[Activity.CYCLING] > means[Activity.WALKING] > means[Activity.SITTING]


def test_static_effect_signs():
    from paee.data import ParticipantProfile, Sex

    eff = StaticEffects()
    base = ParticipantProfile("x", 70, Sex.FEMALE, 165, 70)
    older = ParticipantProfile("x", 80, Sex.FEMALE, 165, 70)
    male = ParticipantProfile("x", 70, Sex.MALE, 165, 70)
    taller = ParticipantProfile("x", 70, Sex.FEMALE, 175, 70)
    heavier = ParticipantProfile("x", 70, Sex.FEMALE, 165, 80)
    for f in (eff.rest_level, eff.gain_level):
        assert f(older) < f(base) < f(male)
        assert f(base) < f(heavier)
    assert eff.rest_level(taller) > eff.rest_level(base)


def test_bayes_floor(subjects):
    for s in subjects:
        assert s.bayes_rmse() == pytest.approx(0.4, rel=0.25)


def test_csv_round_trip(tmp_path, subjects):
    recs = [s.recording for s in subjects]
    write_dataset(tmp_path, recs)
    back = load_dataset(tmp_path, align=False)
    for a, b in zip(recs, back):
        assert a.profile == b.profile
        assert np.array_equal(a.wrist.xyz, b.wrist.xyz) and np.array_equal(a.ankle.t, b.ankle.t)
        assert np.array_equal(a.breath_eem, b.breath_eem)
        assert a.annotations == b.annotations


def test_generate_dataset_is_recordings():
    recs = generate_dataset(SynthConfig(**SMALL))
    assert [r.id for r in recs] == ["S01", "S02", "S03", "S04"]
    assert recs[0].wrist.location is Location.WRIST
