import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import tiny_spec
from qatlab.model import Model, size_preset
from qatlab.numerics import ConfigError, DataError
from qatlab.quant import grid_distance_int6
from qatlab.trainer import (RunRecord, RunSpec, batch_stream, bits_per_byte, detokenize, eval_bpb, load_corpus,
                            model_grid_distance, train_run)


def test_corpus_split(corpus, tmp_path):
    train, val = corpus
    assert len(train) > 10 * len(val) / 2 and len(val) > 100_000
    assert train.min() >= 0 and max(train.max(), val.max()) < 256
    p = tmp_path / "c.txt"
    p.write_bytes(bytes(range(100)))
    tr, va = load_corpus(p, 0.9)
    assert list(tr) == list(range(90)) and list(va) == list(range(90, 100))


def test_corpus_errors(tmp_path):
    empty = tmp_path / "e.txt"
    empty.write_bytes(b"")
    with pytest.raises(DataError):
        load_corpus(empty)
    with pytest.raises(FileNotFoundError):
        load_corpus(tmp_path / "missing.txt")
    with pytest.raises(ConfigError):
        load_corpus(__file__, 1.0)


@given(st.text(max_size=60))
def test_utf8_round_trip(text):
    raw = text.encode("utf-8")
    tokens = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    assert detokenize(tokens).decode("utf-8") == text


def test_batch_stream_shapes_and_determinism(corpus):
    train = corpus[0]
    a = batch_stream(train, 7, 32, 256)
    b = batch_stream(train, 7, 32, 256)
    x, y = next(a), next(b)
    assert x.shape == (8, 33)
    np.testing.assert_array_equal(x, y)
    # each row is a contiguous window of the training split
    start = np.flatnonzero(np.lib.stride_tricks.sliding_window_view(train, 33).__eq__(x[0]).all(axis=1))
    assert start.size >= 1
    assert not np.array_equal(next(a), x)
    assert not np.array_equal(next(batch_stream(train, 8, 32, 256)), x)


def test_batch_stream_short_corpus():
    with pytest.raises(DataError):
        next(batch_stream(np.arange(10), 0, 32, 64))


def test_bits_per_byte_examples():
    assert bits_per_byte(math.log(2)) == pytest.approx(1.0, abs=1e-12)
    assert bits_per_byte(math.log(256)) == pytest.approx(8.0, abs=1e-12)
    assert bits_per_byte(2.0, 4.0) == pytest.approx(2.0 / (4 * math.log(2)))


def test_eval_bpb_of_fresh_model_is_about_eight_bits(corpus):
    model = Model(size_preset("desk-S", seq_len=64), seed=1)
    bpb = eval_bpb(model, corpus[1][:4097])
    assert 0.8 * 8 < bpb < 1.2 * 8


def test_eval_bpb_matches_direct_loss(corpus):
    model = Model(size_preset("desk-S", seq_len=16), seed=2)
    val = corpus[1][:16 * 5 + 1]
    windows = np.stack([val[i * 16:i * 16 + 17] for i in range(5)])
    direct = float(model.forward_loss(windows, "INT6").data) / math.log(2)
    assert eval_bpb(model, val, "INT6", batch_rows=2) == pytest.approx(direct, rel=1e-6)


def test_runspec_validation():
    with pytest.raises(ConfigError):
        RunSpec(batch_tokens=100, seq_len=32)
    with pytest.raises(ValueError):
        RunSpec(bits="int5")
    with pytest.raises(ConfigError):
        RunSpec(warmdown=1.2)
    with pytest.raises(ConfigError):
        RunSpec(lr="lr3x")
    assert RunSpec(bits="int6").bits == "INT6"


def test_eval_and_probe_steps():
    spec = RunSpec(steps=9000, probe_every=200)
    assert spec.eval_steps() == [1500, 3000, 4500, 6000, 7500, 9000]
    assert spec.probe_steps()[:3] == [200, 400, 600] and len(spec.probe_steps()) == 45
    assert RunSpec(steps=200).eval_steps()[0] == 33


def test_record_json_round_trip():
    rec = train_run(tiny_spec(steps=4, eval_count=2))
    back = RunRecord.from_json(rec.to_json())
    assert back == rec
    assert back.run_spec == tiny_spec(steps=4, eval_count=2)


def test_training_learns_on_real_text(corpus):
    spec = RunSpec(size="desk-S", bits="FP16", warmdown=0.33, steps=200, warmup_steps=20, batch_tokens=512,
                   seq_len=64, grad_accum_steps=1, val_bytes=8192)
    rec = train_run(spec, corpus)
    assert rec.status == "completed"
    assert rec.eval_steps[0] == 33 and rec.eval_steps[-1] == 200
    assert rec.val_bpb[-1] < rec.val_bpb[0]
    assert rec.final_bpb == rec.val_bpb[-1]


def test_identical_specs_give_identical_records(corpus):
    spec = tiny_spec(bits="INT6", probe_every=4)
    a, b = train_run(spec, corpus), train_run(spec, corpus)
    assert a.numerics() == b.numerics()
    assert train_run(tiny_spec(bits="INT6", probe_every=4, seed=42), corpus).val_bpb != a.val_bpb


def test_probe_logging_and_checkpoint_recompute(corpus, tmp_path):
    spec = tiny_spec(bits="INT6", steps=20, probe_every=5)
    rec = train_run(spec, corpus, checkpoint_path=tmp_path / "ck.npz")
    assert rec.probe_steps == [5, 10, 15, 20]
    model = Model.load(tmp_path / "ck.npz")
    offline = np.mean([grid_distance_int6(model.params[n].data) for n in model.matrix_names()])
    assert abs(offline - rec.probe_distance[-1]) < 1e-7
    assert model_grid_distance(model) == rec.probe_distance[-1]


def test_master_weights_stay_off_grid(corpus, tmp_path):
    train_run(tiny_spec(bits="INT6", steps=6), corpus, checkpoint_path=tmp_path / "ck.npz")
    assert model_grid_distance(Model.load(tmp_path / "ck.npz")) > 0


def test_divergence_is_recorded(corpus, monkeypatch):
    import qatlab.trainer as tr
    monkeypatch.setattr(tr, "DIVERGENCE_NATS", 0.1)
    rec = tr.train_run(tiny_spec(), corpus)
    assert rec.status == "diverged" and rec.final_bpb is None


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 400), st.integers(1, 12))
def test_eval_steps_end_at_T(steps, count):
    spec = RunSpec(steps=steps, warmup_steps=0, eval_count=count)
    es = spec.eval_steps()
    assert es[-1] == steps and es == sorted(set(es)) and len(es) <= count
