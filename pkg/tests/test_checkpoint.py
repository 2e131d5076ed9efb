"""Checkpoint round-trip bit-identity and atomic file writes."""

import json
import os

import numpy as np
import pytest

from neucredit.checkpoint import (FORMAT_VERSION, _decode_array, _encode_array,
                                  load_checkpoint, save_checkpoint, write_atomic)
from neucredit.data import FeatureScaler, generate_portfolio, pad_and_mask
from neucredit.network import NetworkConfig, build_model


def test_hex_array_round_trip_is_bitwise():
    values = np.array([[0.0, -0.0, 1.0 / 3.0], [5e-324, 1.7976931348623157e308,
                                                -2.225073858507e-308]])
    back = _decode_array(_encode_array(values))
    assert back.shape == values.shape
    assert np.array_equal(back, values)
    # signed zero survives
    assert np.signbit(back[0, 1]) and not np.signbit(back[0, 0])


def test_write_atomic_leaves_no_temp_files(tmp_path):
    target = tmp_path / "out.txt"
    write_atomic(str(target), "hello\n")
    assert target.read_text() == "hello\n"
    write_atomic(str(target), "replaced\n")
    assert target.read_text() == "replaced\n"
    assert os.listdir(tmp_path) == ["out.txt"]


def make_model_and_scaler(seed=31):
    cons = generate_portfolio(10, seed=seed, min_loans=3, max_loans=5,
                              min_events=3, max_events=4)
    raw = pad_and_mask(cons, max_loans=5, max_events=4)
    scaler = FeatureScaler().fit(raw)
    batch = scaler.transform(raw)
    cfg = NetworkConfig(d_ho=2, d_hs=2, d_hl=2, d_z=2, d_m=2, max_loans=5,
                        max_events=4, head="decomposed")
    model = build_model(cfg, seed=seed)
    return model, scaler, batch


def test_checkpoint_round_trip_bit_identity(tmp_path):
    model, scaler, batch = make_model_and_scaler()
    path = str(tmp_path / "model.json")
    save_checkpoint(path, model, scaler, metadata={"note": "x", "seed": 31})
    again, scaler2, meta = load_checkpoint(path)
    assert meta == {"note": "x", "seed": 31}
    assert again.config == model.config
    assert list(again.params.names()) == list(model.params.names())
    for name, t in model.params:
        assert np.array_equal(t.value, again.params[name].value), name
    for stream, (mean, std) in scaler.to_arrays().items():
        m2, s2 = scaler2.to_arrays()[stream]
        assert np.array_equal(mean, m2) and np.array_equal(std, s2)
    p1 = model.predict(batch)
    p2 = again.predict(batch)
    for key in ("y_hat", "y_a", "y_w", "y_b"):
        assert np.array_equal(p1[key], p2[key])


def test_checkpoint_survives_a_second_cycle(tmp_path):
    model, scaler, _ = make_model_and_scaler(seed=32)
    p1 = str(tmp_path / "a.json")
    p2 = str(tmp_path / "b.json")
    save_checkpoint(p1, model, scaler)
    m2, s2, _ = load_checkpoint(p1)
    save_checkpoint(p2, m2, s2)
    assert open(p1).read() == open(p2).read()


def test_unsupported_format_version(tmp_path):
    model, scaler, _ = make_model_and_scaler(seed=33)
    path = str(tmp_path / "model.json")
    save_checkpoint(path, model, scaler)
    doc = json.load(open(path))
    doc["format_version"] = FORMAT_VERSION + 1
    open(path, "w").write(json.dumps(doc))
    with pytest.raises(ValueError):
        load_checkpoint(path)
