import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cola.analytics import (
    PathRecord,
    TransitionCategory,
    classify_transition,
    corpus_report,
    depth_by_transition,
    engagement,
    engagement_csv,
    percentile_depths,
    segment_bounds,
    tradeoff_points,
    transition_counts,
)
from cola.paths import LayerPath


def rec(layers, orig=True, ok=True, n=8, rid=None, mode="joint"):
    path = LayerPath(layers)
    return PathRecord(rid or ",".join(map(str, layers)), orig, path, ok, len(path),
                      len(set(path)), mode, n)


def test_transition_examples():
    assert classify_transition(rec(range(8))) is TransitionCategory.ORIGINAL_OPTIMAL
    assert classify_transition(rec([0, 2], orig=True)) is TransitionCategory.C_TO_C
    assert classify_transition(rec([0, 2], orig=False)) is TransitionCategory.W_TO_C
    assert classify_transition(rec(range(8), orig=False, ok=False)) is TransitionCategory.W_TO_W
    assert classify_transition(rec([0, 2]), shorter_correct_found=False) is \
        TransitionCategory.ORIGINAL_OPTIMAL


def test_uniform_usage_n32():
    prof = engagement([rec(range(32), n=32)] * 3, 32)
    assert prof.selection_frequency == (1.0,) * 32
    assert prof.skip_rate == (0.0,) * 32
    assert prof.mean_recurrence == (0.0,) * 32
    assert abs(prof.usage_entropy - math.log(32)) < 1e-9
    assert abs(prof.usage_entropy - 3.46574) < 1e-5
    assert prof.max_concentration == 0.03125


def test_single_layer_usage():
    prof = engagement([rec([0, 0, 0], n=4), rec([0], n=4)], 4)
    assert prof.usage_entropy == 0.0 and prof.max_concentration == 1.0
    assert prof.selection_frequency == (1.0, 0.0, 0.0, 0.0)
    assert prof.mean_recurrence[0] == 1.0


def test_hand_computed_entropy():
    prof = engagement([rec([0, 0, 1], n=3), rec([0, 2], n=3)], 3)
    want = -(0.6 * math.log(0.6) + 2 * 0.2 * math.log(0.2))
    assert prof.usage_entropy == pytest.approx(want, abs=1e-15)
    assert prof.usage_entropy == pytest.approx(0.95027, abs=1e-5)
    assert prof.mean_recurrence == (0.5, 0.0, 0.0)
    assert prof.usage_share == pytest.approx((0.6, 0.2, 0.2))


def test_empty_usage_marker():
    empty = PathRecord("x", True, LayerPath([]), True, 0, 0, "joint", 4)
    prof = engagement([empty], 4)
    assert prof.usage_entropy is None
    assert prof.to_json()["usage_entropy"] == "empty-usage"
    with pytest.raises(ValueError):
        engagement([], 4)


def test_depth_by_transition():
    out = depth_by_transition([rec([0, 1, 2, 3]), rec([0, 1, 2, 3, 4, 5]), rec(range(8))])
    assert out["c_to_c"]["depth"] == 5.0 and "w_to_c" not in out
    mixed = [rec([0, 0, 1]), rec([1], orig=False), rec([2, 3, 3, 3, 4], orig=False),
             rec(range(8), orig=False, ok=False)]
    out = depth_by_transition(mixed)
    wc = [r for r in mixed if not r.original_correct and r.reported_correct]
    assert out["w_to_c"]["depth"] == sum(r.depth for r in wc) / len(wc)
    assert out["w_to_c"]["non_recurrent_depth"] == sum(r.non_recurrent_depth for r in wc) / len(wc)
    assert out["c_to_c"] == {"count": 1, "depth": 3.0, "non_recurrent_depth": 2.0}


def test_percentile_examples():
    recs = [rec([0] * d, rid=f"r{d}") for d in (4, 6, 8, 10)]
    table = percentile_depths(recs)
    assert table["100"]["depth"] == 7.0
    assert table["5"]["depth"] == 4.0 and table["5"]["count"] == 1
    ten = [rec([0] * d, rid=f"r{d:02d}") for d in range(1, 11)]
    assert percentile_depths(ten)["20"]["count"] == 2
    assert percentile_depths([rec([0], ok=False)]) is None


def test_tradeoff_examples():
    ident = [rec(range(8)) for _ in range(4)]
    assert tradeoff_points({"original": ident})["original"]["mean_depth"] == 8.0
    assert tradeoff_points({"original": ident})["original"]["accuracy"] == 1.0
    pts = tradeoff_points({"joint": [rec([0] * 6), rec([0] * 16, ok=False, n=8)]})
    assert (pts["joint"]["mean_depth"], pts["joint"]["accuracy"]) == (11.0, 0.5)
    with pytest.raises(ValueError):
        tradeoff_points({"joint": []})


def test_segments_round_down():
    assert [len(s) for s in segment_bounds(32)] == [10, 11, 11]
    assert [len(s) for s in segment_bounds(8)] == [2, 3, 3]
    assert [len(s) for s in segment_bounds(2)] == [0, 1, 1]


def test_csv_layout():
    text = engagement_csv({"a:joint": [1.0, 0.5], "b:skip": [0.0, 0.25]})
    assert text.splitlines() == ["layer,a:joint,b:skip", "1,1.0,0.0", "2,0.5,0.25"]


# --- properties -------------------------------------------------------------------------------

@st.composite
def corpora(draw):
    n = draw(st.integers(1, 12))
    size = draw(st.integers(1, 25))
    out = []
    for j in range(size):
        layers = draw(st.lists(st.integers(0, n - 1), min_size=1, max_size=2 * n))
        out.append(rec(layers, orig=draw(st.booleans()), ok=draw(st.booleans()), n=n,
                       rid=f"i{j}"))
    return n, out


@settings(max_examples=300, deadline=None)
@given(corpora(), st.randoms(use_true_random=False))
def test_aggregate_invariants(corpus, rnd):
    n, recs = corpus
    counts = transition_counts(recs)
    assert sum(counts.values()) == len(recs)
    prof = engagement(recs, n)
    for s, k in zip(prof.selection_frequency, prof.skip_rate):
        assert s + k == 1.0
    assert -1e-12 <= prof.usage_entropy <= math.log(n) + 1e-12
    assert 1 / n - 1e-12 <= prof.max_concentration <= 1.0
    # exact rational recomputation of the usage distribution
    occ = [Fraction(sum(r.reported_path.layers.count(i) for r in recs)) for i in range(n)]
    total = sum(occ)
    assert prof.max_concentration == pytest.approx(float(max(occ) / total), abs=1e-15)
    table = percentile_depths(recs)
    if table:
        depths = [table[q]["depth"] for q in ("5", "10", "20", "100")]
        assert depths == sorted(depths)
        assert all(v["non_recurrent_depth"] <= v["depth"] for v in table.values())
    for v in depth_by_transition(recs).values():
        assert v["non_recurrent_depth"] <= v["depth"]
    shuffled = list(recs)
    rnd.shuffle(shuffled)
    assert corpus_report(shuffled, n) == corpus_report(recs, n)


def test_uniform_is_entropy_maximum():
    rng = random.Random(0)
    for _ in range(200):
        n = rng.randint(2, 10)
        recs = [rec([rng.randrange(n) for _ in range(rng.randint(1, 2 * n))], n=n)
                for _ in range(rng.randint(1, 6))]
        prof = engagement(recs, n)
        uniform = len(set(prof.usage_share)) == 1
        assert (abs(prof.usage_entropy - math.log(n)) < 1e-12) == uniform
