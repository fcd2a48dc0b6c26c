import itertools
import json

import numpy as np
import pytest
import torch
from hypothesis import assume, given, settings, strategies as st

from ensemble_pad.dataset import AttackType, Label
from ensemble_pad.ensemble import (
    AggregationRule,
    Ensemble,
    EnsembleConfig,
    RuleName,
    aggregate,
    calibrate_threshold,
    infer,
    load_bundle,
    save_bundle,
    threshold_candidates,
)
from ensemble_pad.errors import (
    BundleError,
    ConfigMismatch,
    CorruptCheckpoint,
    EmptyScores,
    EvenMajority,
    InvalidConfig,
    SingleClassValidation,
    UnknownMember,
)
from ensemble_pad.frames import RegionKind, extract_region, locate_face
from ensemble_pad.model import BackboneConfig, MemberConfig, MemberScore, build_model, predict_member
from ensemble_pad.synthetic import SubjectStyle, SyntheticAttackConfig, render_bonafide, synthesize_attack


def scores(*ps):
    return [MemberScore(f"m{i}", p) for i, p in enumerate(ps)]


MEAN = AggregationRule(RuleName.MEAN_PROBABILITY, 0.5)
MAJ = AggregationRule(RuleName.MAJORITY_VOTE, 0.5)


# -- aggregate examples -------------------------------------------------------------

def test_mean_rule():
    d = aggregate(scores(0.8, 0.6, 0.7), MEAN)
    assert d.aggregate == pytest.approx(0.7, abs=1e-15)
    assert d.verdict is Label.BONAFIDE


def test_majority_rule():
    d = aggregate(scores(0.9, 0.2, 0.3), MAJ)
    assert d.verdict is Label.ATTACK
    assert d.aggregate == pytest.approx(1 / 3)


def test_attack_veto():
    rule = AggregationRule(RuleName.ATTACK_VETO, 0.5, veto_floor=0.1)
    d = aggregate(scores(0.95, 0.92, 0.05), rule)
    assert d.aggregate == pytest.approx(0.64)
    assert d.verdict is Label.ATTACK
    assert aggregate(scores(0.95, 0.92, 0.05), MEAN).verdict is Label.BONAFIDE


def test_identical_members_mean_equals_member():
    # two copies of one member's score
    d = aggregate(scores(0.37, 0.37), MEAN)
    assert d.aggregate == 0.37


def test_empty_and_even():
    with pytest.raises(EmptyScores):
        aggregate([], MEAN)
    with pytest.raises(EvenMajority):
        aggregate(scores(0.1, 0.9), MAJ)


@pytest.mark.parametrize("tau", [0.0, 1.0, -0.2])
def test_rule_threshold_open_interval(tau):
    with pytest.raises(InvalidConfig):
        AggregationRule(RuleName.MEAN_PROBABILITY, tau)


def test_unknown_rule():
    with pytest.raises(InvalidConfig):
        AggregationRule("median")


# -- aggregate invariants ---------------------------------------------------------------

probs = st.lists(st.floats(0, 1), min_size=1, max_size=7)
rules = st.sampled_from(list(RuleName))
taus = st.floats(0.01, 0.99)


@settings(max_examples=300)
@given(probs, rules, taus, st.randoms())
def test_permutation_invariant(ps, name, tau, rnd):
    if name is RuleName.MAJORITY_VOTE:
        assume(len(ps) % 2 == 1)
    rule = AggregationRule(name, tau)
    shuffled = list(ps)
    rnd.shuffle(shuffled)
    a, b = aggregate(scores(*ps), rule), aggregate(scores(*shuffled), rule)
    assert a.verdict is b.verdict
    assert a.aggregate == b.aggregate


@settings(max_examples=300)
@given(probs)
def test_mean_within_range(ps):
    d = aggregate(scores(*ps), MEAN)
    assert min(ps) <= d.aggregate <= max(ps)


@settings(max_examples=300)
@given(probs, taus, st.data())
def test_mean_monotone(ps, tau, data):
    rule = AggregationRule(RuleName.MEAN_PROBABILITY, tau)
    i = data.draw(st.integers(0, len(ps) - 1))
    raised = list(ps)
    raised[i] = data.draw(st.floats(ps[i], 1))
    if aggregate(scores(*ps), rule).is_bonafide:
        assert aggregate(scores(*raised), rule).is_bonafide


@settings(max_examples=300)
@given(probs, taus, st.floats(0.01, 0.99))
def test_veto_more_conservative(ps, tau, floor):
    veto = aggregate(scores(*ps), AggregationRule(RuleName.ATTACK_VETO, tau, floor))
    mean = aggregate(scores(*ps), AggregationRule(RuleName.MEAN_PROBABILITY, tau))
    if mean.verdict is Label.ATTACK or min(ps) < floor:
        assert veto.verdict is Label.ATTACK
    else:
        assert veto.verdict is Label.BONAFIDE


# -- calibration --------------------------------------------------------------------

def brute_force_tau(val, objective):
    """Oracle: enumerate candidates, evaluate error rates with explicit counting."""
    ps = sorted(set(p for p, _ in val))
    cands = sorted(set([0.0, 1.0] + [(a + b) / 2 for a, b in zip(ps, ps[1:])]))
    best = None
    for tau in cands:
        fa = sum(1 for p, y in val if not y and p >= tau)
        fr = sum(1 for p, y in val if y and p < tau)
        na = sum(1 for _, y in val if not y)
        nb = sum(1 for _, y in val if y)
        key = objective(fa / na, fr / nb)
        if best is None or key < best[0]:
            best = (key, tau)
    return best[1]


def test_separated_scores():
    val = [(0.1, False), (0.2, False), (0.15, False), (0.8, True), (0.95, True)]
    tau = calibrate_threshold(val)
    assert 0.2 < tau < 0.8


def test_all_equal_scores_smallest_tau():
    val = [(0.4, True), (0.4, False), (0.4, True)]
    assert calibrate_threshold(val) == 0.0


def test_single_class_validation():
    with pytest.raises(SingleClassValidation):
        calibrate_threshold([(0.2, True), (0.9, True)])


@pytest.mark.parametrize("seed", range(10))
def test_calibration_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    ps = np.round(rng.random(10), 2)
    ys = [True, False] + list(rng.random(8) < 0.5)
    val = list(zip(ps.tolist(), ys))
    assert calibrate_threshold(val, "min_acer") == brute_force_tau(val, lambda a, b: (a + b) / 2)
    limit = 0.2
    assert calibrate_threshold(val, "max_bpcer_at_apcer", limit) == brute_force_tau(
        val, lambda a, b: (max(a - limit, 0.0), b))


def test_candidates():
    assert threshold_candidates([0.2, 0.6, 0.2]) == [0.0, 0.4, 1.0]


# -- ensemble config ----------------------------------------------------------------

TOY = BackboneConfig(input_resolution=(15, 15), conv_blocks=((3, 3, 2), (4, 3, 2)), dense_units=4)


def toy_members(regions=(RegionKind.FULL_FRAME, RegionKind.FACE, RegionKind.BACKGROUND)):
    return tuple(MemberConfig(r, TOY) for r in regions)


def toy_ensemble(rule=MEAN, regions=(RegionKind.FULL_FRAME, RegionKind.FACE, RegionKind.BACKGROUND)):
    cfg = EnsembleConfig(toy_members(regions), rule)
    return Ensemble(cfg, {m.member_id: build_model(m, seed=i + 1) for i, m in enumerate(cfg.members)})


def test_config_invariants():
    with pytest.raises(InvalidConfig):
        EnsembleConfig(toy_members((RegionKind.FACE,)))
    with pytest.raises(InvalidConfig):
        EnsembleConfig((MemberConfig(RegionKind.FACE, TOY, "a"), MemberConfig(RegionKind.FACE, TOY, "b")))
    with pytest.raises(InvalidConfig):
        EnsembleConfig((MemberConfig(RegionKind.FACE, TOY, "a"), MemberConfig(RegionKind.BACKGROUND, TOY, "a")))
    with pytest.raises(EvenMajority):
        EnsembleConfig(toy_members((RegionKind.FACE, RegionKind.BACKGROUND)), MAJ)


def test_unknown_member():
    ens = toy_ensemble()
    with pytest.raises(UnknownMember):
        ens.member("nose")


# -- inference ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def printed():
    rng = np.random.default_rng(8)
    face = render_bonafide(SubjectStyle.draw(rng), rng, (48, 48))
    img, _ = synthesize_attack(face, SyntheticAttackConfig(AttackType.PRINTED_PHOTO, seed=2))
    return img


def test_infer_matches_sequential_predictions(printed):
    ens = toy_ensemble()
    result = infer(printed, ens)
    box = locate_face(printed)
    expected = []
    for mc in ens.config.members:
        view = extract_region(printed, box, mc.region, mc.backbone.input_resolution, ens.band_fraction)
        expected.append(predict_member(ens.member(mc.member_id), view))
    assert list(result.decision.member_scores) == expected
    assert result.frame_index == 0
    assert result.decision == aggregate(expected, ens.rule)


def test_single_frame_equals_three_copy_video(printed):
    ens = toy_ensemble()
    a = infer(printed, ens)
    b = infer([printed, printed, printed], ens)
    assert b.frame_index == 0
    assert a.decision == b.decision


def test_single_frame_video_short_circuits(printed):
    ens = toy_ensemble()
    r = infer([printed], ens)
    assert r.frame_index == 0 and r.quality is None


def test_concurrent_member_order_is_irrelevant(printed):
    ens = toy_ensemble()
    d = infer(printed, ens).decision
    for perm in itertools.permutations(d.member_scores):
        assert aggregate(perm, ens.rule).aggregate == d.aggregate


# -- bundles ----------------------------------------------------------------------------

def test_bundle_round_trip(tmp_path, printed):
    ens = toy_ensemble(AggregationRule(RuleName.MAJORITY_VOTE, 0.37))
    save_bundle(ens, tmp_path)
    loaded = load_bundle(tmp_path)
    assert loaded.config == ens.config
    for mid, m in ens.members.items():
        for a, b in zip(m.parameters(), loaded.members[mid].parameters()):
            assert torch.equal(a, b)
    assert infer(printed, loaded).decision == infer(printed, ens).decision
    doc = json.loads((tmp_path / "ensemble.json").read_text())
    assert doc["rule"]["threshold"] == 0.37
    assert sorted(p.name for p in tmp_path.iterdir() if p.is_dir()) == sorted(ens.members)


def test_bundle_missing(tmp_path):
    with pytest.raises(BundleError):
        load_bundle(tmp_path)


def test_bundle_region_swap(tmp_path):
    ens = toy_ensemble()
    save_bundle(ens, tmp_path)
    doc = json.loads((tmp_path / "ensemble.json").read_text())
    doc["members"][1]["region"] = "face_band"
    (tmp_path / "ensemble.json").write_text(json.dumps(doc))
    with pytest.raises(ConfigMismatch):
        load_bundle(tmp_path)


def test_bundle_corrupt_member(tmp_path):
    ens = toy_ensemble()
    save_bundle(ens, tmp_path)
    w = tmp_path / "face" / "weights.bin"
    w.write_bytes(w.read_bytes()[:8])
    with pytest.raises(CorruptCheckpoint):
        load_bundle(tmp_path)
