"""Data pipeline tests: loader validation with line numbers, padding and its
inverse, standardization, stratified folds, and the two generators."""

import json
import math

import numpy as np
import pytest

from neucredit import data as D
from neucredit.data import (ConsumerSequence, DataValidationError, FeatureScaler,
                            FlatSequence, LoanEvent, five_fold_split,
                            generate_portfolio, generate_synthetic,
                            label_argument, load_consumer_dataset,
                            load_flat_dataset, loan_view_batch, pad_and_mask,
                            pad_flat, save_consumer_dataset, save_flat_dataset,
                            sniff_dataset_kind, subset_batch,
                            unpad_consumer_batch, unpad_flat_batch)


def make_loan(width=3, y=0):
    return {"features": [0.0] + [1.0] * (width - 1), "y": y, "r": 1.0 if y == 0 else 0.2,
            "orders": [[0.0, 1.0]] * 3, "sessions": [[0.0, 2.0, 3.0]] * 3}


def make_consumer(cid="c1", n_loans=3, width=3):
    return {"consumer_id": cid, "loans": [make_loan(width) for _ in range(n_loans)]}


def write_lines(path, objs):
    with open(path, "w") as fh:
        for obj in objs:
            fh.write(obj if isinstance(obj, str) else json.dumps(obj))
            fh.write("\n")
    return str(path)


# ---------------------------------------------------------------------------
# loading and validation

def test_consumer_round_trip(tmp_path):
    cons = generate_portfolio(5, seed=60)
    p = str(tmp_path / "cons.jsonl")
    save_consumer_dataset(p, cons)
    again = load_consumer_dataset(p)
    assert again == cons


def test_flat_round_trip(tmp_path):
    seqs = generate_synthetic(4, length=6, seed=61)
    p = str(tmp_path / "flat.jsonl")
    save_flat_dataset(p, seqs)
    again = load_flat_dataset(p)
    assert again == seqs


def test_sniff_dataset_kind(tmp_path):
    p1 = write_lines(tmp_path / "a.jsonl", [make_consumer()])
    assert sniff_dataset_kind(p1) == "consumer"
    p2 = write_lines(tmp_path / "b.jsonl",
                     [{"sequence_id": "s", "steps": [{"features": [0.0], "y": 0}]}])
    assert sniff_dataset_kind(p2) == "flat"
    p3 = write_lines(tmp_path / "c.jsonl", [{"what": 1}])
    with pytest.raises(DataValidationError):
        sniff_dataset_kind(p3)


def load_error(tmp_path, objs, name="bad.jsonl"):
    p = write_lines(tmp_path / name, objs)
    with pytest.raises(DataValidationError) as err:
        load_consumer_dataset(p)
    return str(err.value)


def test_loan_sequence_length_bounds(tmp_path):
    msg = load_error(tmp_path, [make_consumer(n_loans=2)])
    assert "line 1" in msg and "below the minimum length of 3" in msg
    msg = load_error(tmp_path, [make_consumer(n_loans=16)])
    assert "line 1" in msg and "above the maximum length of 15" in msg


def test_event_sequence_length_bounds(tmp_path):
    c = make_consumer()
    c["loans"][1]["orders"] = [[0.0, 1.0]] * 2
    msg = load_error(tmp_path, [c])
    assert "order sub-sequence has 2 events, below the minimum length of 3" in msg
    c = make_consumer()
    c["loans"][0]["sessions"] = [[0.0, 2.0, 3.0]] * 16
    msg = load_error(tmp_path, [c])
    assert "session sub-sequence has 16 events, above the maximum length of 15" in msg


def test_errors_carry_the_failing_line_number(tmp_path):
    good = make_consumer()
    bad = make_consumer("c3")
    bad["loans"][0]["y"] = 2
    msg = load_error(tmp_path, [good, make_consumer("c2"), bad])
    assert msg.startswith("line 3:") and "label y must be 0 or 1" in msg


def test_negative_interval_rejected(tmp_path):
    c = make_consumer()
    c["loans"][0]["features"][0] = -1.0
    msg = load_error(tmp_path, [c])
    assert "negative interval in column 0" in msg


def test_non_finite_feature_rejected(tmp_path):
    c = make_consumer()
    c["loans"][0]["orders"][1][1] = float("nan")
    msg = load_error(tmp_path, [c])
    assert "non-finite or non-numeric" in msg


def test_repayment_ratio_bounds(tmp_path):
    c = make_consumer()
    c["loans"][2]["r"] = 1.5
    msg = load_error(tmp_path, [c])
    assert "repayment ratio r must lie in [0, 1]" in msg


def test_feature_width_must_be_consistent(tmp_path):
    wide = make_consumer("c2")
    wide["loans"][1]["features"] = [0.0, 1.0, 2.0, 3.0]
    msg = load_error(tmp_path, [make_consumer(), wide])
    assert "line 2" in msg and "has 4 features, expected 3" in msg


def test_missing_keys_and_bad_json(tmp_path):
    msg = load_error(tmp_path, [{"consumer_id": "x"}])
    assert "expected an object with consumer_id and loans" in msg
    c = make_consumer()
    del c["loans"][0]["r"]
    msg = load_error(tmp_path, [c])
    assert "loan missing key 'r'" in msg
    msg = load_error(tmp_path, ["{not json"])
    assert "line 1" in msg and "invalid JSON" in msg


def test_empty_dataset_rejected(tmp_path):
    msg = load_error(tmp_path, [])
    assert "dataset is empty" in msg
    p = write_lines(tmp_path / "e.jsonl", [])
    with pytest.raises(DataValidationError):
        load_flat_dataset(p)


def test_flat_loader_validates_steps(tmp_path):
    p = write_lines(tmp_path / "f.jsonl",
                    [{"sequence_id": "s", "steps": [{"features": [0.0, 1.0]}]}])
    with pytest.raises(DataValidationError) as err:
        load_flat_dataset(p)
    assert "each step needs features and y" in str(err.value)


# ---------------------------------------------------------------------------
# padding

def test_pad_and_mask_layout():
    cons = generate_portfolio(6, seed=62, min_loans=3, max_loans=5,
                              min_events=3, max_events=4)
    b = pad_and_mask(cons, max_loans=7, max_events=6)
    assert b.loan_feats.shape == (6, 7, 15)
    assert b.order_feats.shape == (6, 7, 6, 45)
    assert b.session_feats.shape == (6, 7, 6, 16)
    for k, c in enumerate(cons):
        n = len(c.loans)
        assert np.array_equal(b.loan_mask[k, :n], np.ones(n))
        assert np.array_equal(b.loan_mask[k, n:], np.zeros(7 - n))
        assert np.array_equal(b.loan_feats[k, n:], np.zeros((7 - n, 15)))
        for i, loan in enumerate(c.loans):
            assert b.loan_dts[k, i] == loan.features[0]
            assert b.y[k, i] == loan.y and b.r[k, i] == loan.r
            e = len(loan.orders)
            assert np.array_equal(b.order_mask[k, i, :e], np.ones(e))
            assert np.array_equal(b.order_feats[k, i, e:], np.zeros((6 - e, 45)))
    assert b.label_mask is b.loan_mask


def test_pad_and_mask_rejects_overflow():
    cons = generate_portfolio(3, seed=63, min_loans=4, max_loans=5)
    with pytest.raises(DataValidationError):
        pad_and_mask(cons, max_loans=3, max_events=15)
    with pytest.raises(DataValidationError):
        pad_and_mask(cons, max_loans=8, max_events=2)


def test_pad_unpad_consumer_round_trip():
    cons = generate_portfolio(7, seed=64)
    again = unpad_consumer_batch(pad_and_mask(cons, max_loans=9, max_events=7))
    assert again == cons


def test_pad_flat_defaults_to_longest():
    seqs = generate_synthetic(3, length=5, seed=65)
    seqs[1] = FlatSequence(sequence_id=seqs[1].sequence_id,
                           features=seqs[1].features[:3], labels=seqs[1].labels[:3])
    b = pad_flat(seqs)
    assert b.feats.shape[1] == 5
    assert np.array_equal(b.mask[1], [1, 1, 1, 0, 0])
    assert unpad_flat_batch(b) == seqs
    with pytest.raises(DataValidationError):
        pad_flat(seqs, max_len=4)


def test_loan_view_batch_matches_loan_stream():
    cons = generate_portfolio(4, seed=66)
    b = pad_and_mask(cons, max_loans=8, max_events=6)
    v = loan_view_batch(b)
    assert np.array_equal(v.feats, b.loan_feats)
    assert np.array_equal(v.dts, b.loan_dts)
    assert np.array_equal(v.mask, b.loan_mask)
    assert np.array_equal(v.y, b.y) and np.array_equal(v.r, b.r)
    assert v.ids == b.consumer_ids


def test_subset_batch_selects_rows():
    cons = generate_portfolio(5, seed=67)
    b = pad_and_mask(cons, max_loans=8, max_events=6)
    s = subset_batch(b, [3, 0])
    assert s.consumer_ids == [b.consumer_ids[3], b.consumer_ids[0]]
    assert np.array_equal(s.loan_feats[0], b.loan_feats[3])
    assert np.array_equal(s.order_mask[1], b.order_mask[0])
    flat = pad_flat(generate_synthetic(4, length=5, seed=68))
    sf = subset_batch(flat, [2])
    assert sf.ids == [flat.ids[2]]
    assert np.array_equal(sf.feats[0], flat.feats[2])


# ---------------------------------------------------------------------------
# standardization

def test_scaler_standardizes_valid_positions():
    cons = generate_portfolio(40, seed=69)
    b = pad_and_mask(cons, max_loans=8, max_events=6)
    out = FeatureScaler().fit(b).transform(b)
    for feats, mask in ((out.loan_feats, out.loan_mask),
                        (out.order_feats, out.order_mask),
                        (out.session_feats, out.session_mask)):
        rows = feats.reshape(-1, feats.shape[-1])[mask.reshape(-1) == 1.0]
        assert np.max(np.abs(rows.mean(axis=0))) < 1e-10
        assert np.max(np.abs(rows.std(axis=0) - 1.0)) < 1e-10
        padded = feats.reshape(-1, feats.shape[-1])[mask.reshape(-1) == 0.0]
        assert np.all(padded == 0.0)
    # raw dts are untouched even though interval columns are standardized
    assert np.array_equal(out.loan_dts, b.loan_dts)


def test_scaler_handles_constant_columns():
    seqs = generate_synthetic(5, length=4, seed=70)
    b = pad_flat(seqs)
    b.feats[:, :, 2] = 7.0
    out = FeatureScaler().fit(b).transform(b)
    assert np.all(out.feats[:, :, 2][b.mask == 1.0] == 0.0)
    assert np.all(np.isfinite(out.feats))


def test_scaler_array_round_trip():
    b = pad_flat(generate_synthetic(6, length=5, seed=71))
    sc = FeatureScaler().fit(b)
    sc2 = FeatureScaler.from_arrays(sc.to_arrays())
    assert np.array_equal(sc.transform(b).feats, sc2.transform(b).feats)


def test_scaler_is_fit_once_applied_elsewhere():
    train = pad_flat(generate_synthetic(6, length=5, seed=72))
    test = pad_flat(generate_synthetic(6, length=5, seed=73))
    sc = FeatureScaler().fit(train)
    out = sc.transform(test)
    mean, std = sc.stats["flat"]
    want = (test.feats[2, 3] - mean) / std
    assert np.allclose(out.feats[2, 3], want, atol=0, rtol=0)


# ---------------------------------------------------------------------------
# folds

def test_five_fold_split_partitions_and_stratifies():
    cons = generate_portfolio(30, seed=74)
    labels = {c.consumer_id: c.has_default for c in cons}
    n_pos = sum(1 for v in labels.values() if v)
    folds = five_fold_split(cons, seed=9)
    assert len(folds) == 5
    all_test_ids = []
    for train, test in folds:
        assert len(train) + len(test) == 30
        train_ids = {c.consumer_id for c in train}
        test_ids = {c.consumer_id for c in test}
        assert not train_ids & test_ids
        all_test_ids.extend(sorted(test_ids))
        pos = sum(1 for c in test if labels[c.consumer_id])
        assert abs(pos - n_pos / 5) <= 1.0  # round-robin per stratum
    assert sorted(all_test_ids) == sorted(labels)


def test_five_fold_split_is_deterministic():
    cons = generate_portfolio(12, seed=75)
    a = five_fold_split(cons, seed=1)
    b = five_fold_split(cons, seed=1)
    c = five_fold_split(cons, seed=2)
    ids = lambda folds: [[x.consumer_id for x in test] for _, test in folds]
    assert ids(a) == ids(b)
    assert ids(a) != ids(c)


def test_ten_items_two_per_test_fold():
    cons = generate_portfolio(10, seed=76)
    for _, test in five_fold_split(cons, seed=3):
        assert len(test) == 2


# ---------------------------------------------------------------------------
# synthetic generator

def test_synthetic_shapes_and_intervals():
    seqs = generate_synthetic(3, length=8, seed=77)
    assert len(seqs) == 3
    for s in seqs:
        feats = np.array(s.features)
        assert feats.shape == (8, 106)
        assert feats[0, 0] == 0.0
        assert np.all(feats[1:, 0] >= 0.0) and np.all(feats[1:, 0] <= 10.0)
        assert len(s.labels) == 8


def test_synthetic_labels_match_argument_rule():
    seqs = generate_synthetic(10, length=20, seed=78)
    for s in seqs:
        for row, y in zip(s.features, s.labels):
            assert y == (1 if label_argument(row) >= 0.0 else 0)


def test_synthetic_determinism_and_param_modes():
    a = generate_synthetic(4, length=6, seed=79)
    b = generate_synthetic(4, length=6, seed=79)
    c = generate_synthetic(4, length=6, seed=80)
    assert a == b and a != c
    d = generate_synthetic(4, length=6, seed=79, per_sequence_params=True)
    assert d != a


def test_sigmoid_half_threshold_equals_sign_rule():
    # labeling by sigmoid(arg) >= 1/2 is the same decision as arg >= 0
    gen = np.random.Generator(np.random.PCG64(81))
    args = np.concatenate([gen.standard_normal(1000000) * 3.0, [0.0]])
    sig = 1.0 / (1.0 + np.exp(-args))
    assert np.array_equal(sig >= 0.5, args >= 0.0)


def test_synthetic_positive_fraction_small_scale():
    seqs = generate_synthetic(500, length=50, seed=46)
    ys = [y for s in seqs for y in s.labels]
    frac = sum(ys) / len(ys)
    assert 0.5 < frac < 0.8


# ---------------------------------------------------------------------------
# portfolio generator

def test_portfolio_is_schema_valid(tmp_path):
    cons = generate_portfolio(25, seed=82)
    p = str(tmp_path / "port.jsonl")
    save_consumer_dataset(p, cons)
    again = load_consumer_dataset(p)  # loader enforces the full schema
    assert again == cons
    assert {len(c.loans) for c in cons} <= set(range(3, 9))
    for c in cons:
        for loan in c.loans:
            assert len(loan.features) == 15
            assert 3 <= len(loan.orders) <= 6
            assert 3 <= len(loan.sessions) <= 6
            assert all(len(o) == 45 for o in loan.orders)
            assert all(len(s) == 16 for s in loan.sessions)
            if loan.y == 1:
                assert 0.0 <= loan.r <= 0.6
            else:
                assert 0.7 <= loan.r <= 1.0


def test_portfolio_has_both_classes_and_is_deterministic():
    cons = generate_portfolio(100, seed=83)
    ys = [loan.y for c in cons for loan in c.loans]
    assert 0 < sum(ys) < len(ys)
    assert generate_portfolio(10, seed=84) == generate_portfolio(10, seed=84)
    assert generate_portfolio(10, seed=84) != generate_portfolio(10, seed=85)


def test_constants():
    assert D.MIN_EVENTS == 3
    assert D.MAX_EVENTS == 15
