import itertools
import math
import os
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feudaldm.acts import USER_ACT_TYPES
from feudaldm.belief_tracker import SEARCH_METHODS, BeliefState, init_belief
from feudaldm.dip_features import (
    DIP_SIZE, GENERAL_SIZE, JOINT_SIZE, LAYOUT, MASTER_SIZE, ONE_HOT_SEGMENTS, SLOT_SIZE, DipFeaturizer,
    bin_encode, dip, entropy, format_features, labels, master_features, psi0, psi_d, psi_j, segment_slices,
)
from feudaldm.ontology import PRESETS, build_domain, preset_domain

GOLDEN = os.path.join(os.path.dirname(__file__), "golden", "master_features_cr_initial.txt")


def test_bin_encode_examples():
    assert list(bin_encode(0, [1, 2, 3, 4])) == [1, 0, 0, 0, 0]
    assert list(bin_encode(2.5, [1, 2, 3, 4])) == [0, 0, 1, 0, 0]
    assert list(bin_encode(99, [1, 2, 3, 4])) == [0, 0, 0, 0, 1]
    assert list(bin_encode(2, [1, 2, 3, 4])) == [0, 0, 1, 0, 0]
    with pytest.raises(ValueError):
        bin_encode(1, [1, 1, 2])


@given(st.floats(-1e6, 1e6), st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=9, unique=True).map(sorted))
def test_bin_encode_is_interval_one_hot(x, cuts):
    v = bin_encode(x, cuts)
    assert v.sum() == 1.0 and len(v) == len(cuts) + 1
    k = int(np.argmax(v))
    lo = -math.inf if k == 0 else cuts[k - 1]
    hi = math.inf if k == len(cuts) else cuts[k]
    assert lo <= x < hi


def test_layout_sizes():
    assert (GENERAL_SIZE, JOINT_SIZE, SLOT_SIZE, MASTER_SIZE, DIP_SIZE) == (22, 15, 27, 37, 64)
    assert sum(w for _, w in LAYOUT) == 64
    assert len(labels()) == 64
    sl = segment_slices()
    assert sl["general.inv_avg_values"] == slice(21, 22)
    assert sl["joint.top3"] == slice(22, 25) and sl["slot.top3"] == slice(37, 40)
    assert sl["slot.db_entropy"] == slice(63, 64)


def test_psi0_initial_cr(cr):
    ont, _ = cr
    v = psi0(init_belief(ont), ont)
    assert len(v) == 22
    assert list(v[13:18]) == [1, 0, 0, 0, 0]
    assert v[20] == pytest.approx(0.3333, abs=1e-4) and v[21] == pytest.approx(0.2, abs=1e-12)
    assert v[USER_ACT_TYPES.index("other")] == 1.0 and v[7 + SEARCH_METHODS.index("none")] == 1.0


def test_psi0_offer_flag(cr):
    ont, _ = cr
    b = replace(init_belief(ont), offer_happened=True)
    assert psi0(b, ont)[18] == 1.0 and psi0(init_belief(ont), ont)[18] == 0.0
    b = replace(init_belief(ont), last_action_inform_none=True, requested_slots=frozenset({"phone", "addr"}))
    v = psi0(b, ont)
    assert v[19] == 1.0 and list(v[13:18]) == [0, 0, 1, 0, 0]


def raw_belief(*dists):
    dists = tuple(np.asarray(d, dtype=float) for d in dists)
    return BeliefState("raw", tuple(f"s{i}" for i in range(len(dists))), dists)


def test_psi_j_degenerate(cr):
    v = psi_j(init_belief(cr[0]))
    assert len(v) == 15
    assert list(v[0:3]) == [1, 0, 0] and v[3] == 1.0 and v[4] == 0.0
    assert list(v[5:10]) == [0, 0, 0, 0, 1]
    assert list(v[10:15]) == [1, 0, 0, 0, 0]


def test_psi_j_two_slot_example():
    v = psi_j(raw_belief([0.6, 0.4], [0.5, 0.5]))
    np.testing.assert_allclose(v[0:3], [0.30, 0.30, 0.20], atol=1e-12)
    assert v[3] == pytest.approx(0.30)
    oracle = -sum(p * math.log(p) for p in (0.3, 0.3, 0.2, 0.2))
    assert v[4] == pytest.approx(oracle, abs=1e-12)
    assert round(v[4], 4) == 1.3662
    assert list(v[5:10]) == [1, 0, 0, 0, 0]


def _slot_domain(values=("a", "b")):
    ents = [{"s": v, "t": values[0]} for v in values]
    return build_domain("two", [("s", list(values)), ("t", list(values))], ["s", "t"], ents)


def test_psi_d_initial(cr):
    ont, db = cr
    v = psi_d(init_belief(ont), "food", ont, db)
    assert len(v) == 27
    assert list(v[0:3]) == [1, 0, 0] and v[3] == 1.0 and v[9] == 0.0
    assert list(v[10:15]) == [1, 0, 0, 0, 0]
    assert v[15] == pytest.approx(1 / 6)
    # 6 values fall in the half-open bin [6, 10)
    assert list(v[16:26]) == [0, 0, 1, 0, 0, 0, 0, 0, 0, 0]


def test_psi_d_entropy_example():
    ont, db = _slot_domain()
    b = init_belief(ont)
    b = replace(b, dists=(np.array([0.5, 0.3, 0.2, 0.0]), b.dists[1]))
    v = psi_d(b, "s", ont, db)
    oracle = -sum(p * math.log(p) for p in (0.5, 0.3, 0.2))
    assert v[9] == pytest.approx(oracle, abs=1e-12) and round(v[9], 4) == 1.0297
    np.testing.assert_allclose(v[0:3], [0.5, 0.3, 0.2])
    assert list(v[4:9]) == [0, 1, 0, 0, 0]
    assert list(v[10:15]) == [0, 1, 0, 0, 0]
    assert v[26] == pytest.approx(math.log(2))


def test_psi_d_unknown_slot(cr):
    ont, db = cr
    with pytest.raises(ValueError):
        psi_d(init_belief(ont), "colour", ont, db)


def test_master_golden_vector(cr):
    ont, db = cr
    m = master_features(init_belief(ont), ont)
    expected = np.zeros(37)
    for i, v in {USER_ACT_TYPES.index("other"): 1.0, 7: 1.0, 13: 1.0, 20: 1 / 3, 21: 0.2,
                 22: 1.0, 25: 1.0, 31: 1.0, 32: 1.0}.items():
        expected[i] = v
    np.testing.assert_array_equal(m, expected)
    with open(GOLDEN) as fh:
        frozen = np.array([float(line) for line in fh])
    np.testing.assert_array_equal(m, frozen)


def random_belief(ont, rng, sparsity=0.5):
    b = init_belief(ont)
    dists = []
    for d in b.dists:
        x = rng.random(len(d)) * (rng.random(len(d)) > sparsity)
        x[int(rng.integers(len(d)))] += 0.1
        dists.append(x / x.sum())
    req = frozenset(r for r in ont.requestable_slots if rng.random() < 0.2)
    return replace(b, dists=tuple(dists), requested_slots=req,
                   last_user_act_type=USER_ACT_TYPES[int(rng.integers(7))],
                   search_method=SEARCH_METHODS[int(rng.integers(6))],
                   offer_happened=bool(rng.random() < 0.5), last_action_inform_none=bool(rng.random() < 0.5),
                   turn_index=int(rng.integers(20)))


def check_vector(v, b, s, ont, db):
    sl = segment_slices()
    assert v.shape == (64,) and np.all(np.isfinite(v))
    for name in ONE_HOT_SEGMENTS:
        seg = v[sl[name]]
        assert seg.sum() == 1.0 and set(np.unique(seg)) <= {0.0, 1.0}, name
    n_joint = np.prod([len(d) for d in b.dists])
    assert 0.0 <= v[sl["joint.entropy"]][0] <= math.log(n_joint) + 1e-9
    assert 0.0 <= v[sl["slot.entropy"]][0] <= math.log(len(b.dist(s))) + 1e-9
    for name in ("joint.top3", "joint.none", "slot.top3", "slot.none"):
        assert np.all((v[sl[name]] >= 0) & (v[sl[name]] <= 1 + 1e-12))


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_fixed_size_on_every_domain(name):
    ont, db = preset_domain(name)
    rng = np.random.default_rng(len(name))
    feats = DipFeaturizer(ont, db)
    for _ in range(30):
        b = random_belief(ont, rng)
        m = master_features(b, ont)
        assert m.shape == (37,)
        for s in ont.slot_names:
            v = dip(b, s, ont, db)
            check_vector(v, b, s, ont, db)
            np.testing.assert_array_equal(v[:37], m)
            np.testing.assert_array_equal(v, feats.dip(b, s))
        np.testing.assert_array_equal(feats.null_slot(b), np.concatenate([m, np.zeros(27)]))


def brute_joint(dists):
    return np.array(sorted((float(np.prod(c)) for c in itertools.product(*dists)), reverse=True))


def joint_beliefs():
    def dist(n):
        return st.lists(st.floats(0, 1), min_size=n, max_size=n).filter(lambda x: sum(x) > 1e-3).map(
            lambda x: np.array(x) / sum(x))
    return st.integers(1, 3).flatmap(lambda k: st.lists(st.integers(2, 4).flatmap(dist), min_size=k, max_size=k))


@settings(max_examples=200, deadline=None)
@given(joint_beliefs())
def test_psi_j_matches_enumeration(dists):
    v = psi_j(raw_belief(*dists))
    probs = brute_joint(dists)
    top = np.zeros(3)
    top[: min(3, probs.size)] = probs[:3]
    np.testing.assert_allclose(v[0:3], top, atol=1e-9)
    assert abs(v[3] - np.prod([d[0] for d in dists])) <= 1e-9
    p = probs[probs > 0]
    assert abs(v[4] - float(-np.sum(p * np.log(p)))) <= 1e-9


def test_large_joint_entropy_is_lower_bound(lap):
    ont, db = lap
    rng = np.random.default_rng(0)
    for _ in range(10):
        b = random_belief(ont, rng, sparsity=0.2)
        true_h = sum(entropy(d) for d in b.dists)
        assert psi_j(b)[4] <= true_h + 1e-9


def test_permuting_slots_swaps_slot_segment():
    ont, db = _slot_domain(("a", "b", "c"))
    b = init_belief(ont)
    b = replace(b, dists=(np.array([0.2, 0.5, 0.3, 0.0]), np.array([0.1, 0.1, 0.1, 0.7])))
    swapped = replace(b, dists=(b.dists[1], b.dists[0]))
    for s, t in (("s", "t"), ("t", "s")):
        d1, d2 = dip(b, s, ont, db), dip(swapped, t, ont, db)
        np.testing.assert_array_equal(d1[37:37 + 15], d2[37:37 + 15])
        np.testing.assert_allclose(d1[:37], d2[:37], atol=1e-12)


def test_identical_marginals_identical_segments():
    ont, db = generate_same_entropy_domain()
    b = init_belief(ont)
    d = np.array([0.3, 0.6, 0.1, 0.0, 0.0])
    b = replace(b, dists=(d, d.copy()))
    np.testing.assert_array_equal(psi_d(b, "s", ont, db), psi_d(b, "t", ont, db))


def generate_same_entropy_domain():
    vals = ["a", "b", "c"]
    ents = [{"s": v, "t": v} for v in vals]
    return build_domain("same", [("s", vals), ("t", vals)], ["s", "t"], ents)


def test_dip_is_pure(sfr):
    ont, db = sfr
    b = random_belief(ont, np.random.default_rng(4))
    assert dip(b, "area", ont, db).tobytes() == dip(b, "area", ont, db).tobytes()


def test_format_features(cr):
    ont, db = cr
    text = format_features(dip(init_belief(ont), "food", ont, db))
    lines = text.splitlines()
    assert len(lines) == 64
    assert lines[0] == "0\tgeneral.last_user_act[0]\t0.0"
    assert lines[20] == f"20\tgeneral.inv_n_slots\t{1 / 3!r}"
    assert lines[63].startswith("63\tslot.db_entropy\t")
    with pytest.raises(ValueError):
        format_features(np.zeros(37))
