import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from eegdecode import convnet as cn
from eegdecode import io
from eegdecode.errors import BadMagicError, InvalidInputError, FileFormatError, TruncatedFileError, VersionMismatchError
from eegdecode.fbcsp import fbcsp_predict, fbcsp_train
from eegdecode.perturbation import CorrelationMap
from eegdecode.rlda import fit_trials, predict_trials
from eegdecode.signal import DecodingInterval, TrialSet
from eegdecode.synth import SynthConfig, generate


@pytest.fixture(scope="module")
def trials():
    return generate(SynthConfig(n_trials=20, n_channels=4, duration_s=0.8, erp_channels=(1,),
                                erp_center_s=0.4, seed=1))


@pytest.fixture(scope="module")
def band_trials():
    return generate(SynthConfig(n_trials=20, n_channels=4, duration_s=1.0, scenario="B",
                                band_channel=2, seed=2))


# --- trial files ------------------------------------------------------------------


def test_trialset_round_trip_is_bit_exact(trials, tmp_path):
    path = tmp_path / "t.eegt"
    io.write_trialset(trials, path)
    back = io.read_trialset(path)
    assert back.data.dtype == np.float32
    assert back.data.tobytes() == trials.data.astype("<f4").tobytes()
    np.testing.assert_array_equal(back.labels, trials.labels)
    assert back.sample_rate == trials.sample_rate
    assert back.channel_labels == trials.channel_labels
    # header fields are float32 on disk
    assert back.interval.end_s == float(np.float32(trials.interval.end_s))
    # a second round trip from float32 data is the identity on bytes
    assert io.encode_trialset(back) == path.read_bytes()


@given(
    hnp.arrays(np.float32, st.tuples(st.integers(0, 3), st.integers(1, 3), st.integers(1, 5)),
               elements=st.floats(-1e6, 1e6, width=32)),
    st.floats(1, 2000, width=32),
)
def test_trialset_round_trip_property(data, rate):
    labels = np.arange(data.shape[0]) % 2
    t = TrialSet(data, labels, float(rate), DecodingInterval(0.5, 2.0), tuple(f"ch{i}é" for i in range(data.shape[1])))
    back = io.decode_trialset(io.encode_trialset(t))
    assert back.data.tobytes() == data.tobytes()
    assert back.channel_labels == t.channel_labels and back.sample_rate == np.float32(rate)


def test_truncated_trial_file(trials):
    buf = io.encode_trialset(trials)
    with pytest.raises(TruncatedFileError):
        io.decode_trialset(buf[:-1])
    with pytest.raises(TruncatedFileError):
        io.decode_trialset(buf[:10])
    with pytest.raises(FileFormatError):
        io.decode_trialset(buf + b"\0")


def test_bad_magic_and_version(trials):
    buf = io.encode_trialset(trials)
    with pytest.raises(BadMagicError):
        io.decode_trialset(b"XXXX" + buf[4:])
    with pytest.raises(VersionMismatchError):
        io.decode_trialset(buf[:4] + struct.pack("<I", 99) + buf[8:])


def test_header_layout(trials):
    buf = io.encode_trialset(trials)
    magic, version, n, c, s = struct.unpack_from("<4sIIII", buf)
    assert (magic, version, n, c, s) == (b"EEGT", 1, trials.n_trials, trials.n_channels, trials.n_samples)


# --- checkpoints --------------------------------------------------------------------------


def check_round_trip(model, tmp_path):
    path = tmp_path / "m.eegm"
    io.save_model(model, path)
    back = io.load_model(path)
    io.save_model(back, tmp_path / "again.eegm")
    assert (tmp_path / "again.eegm").read_bytes() == path.read_bytes()
    return back


def test_rlda_checkpoint(trials, tmp_path):
    model = fit_trials(trials)
    back = check_round_trip(model, tmp_path)
    np.testing.assert_array_equal(back.weights, model.weights)
    assert back.bias == model.bias and back.gamma == model.gamma
    np.testing.assert_array_equal(predict_trials(back, trials), predict_trials(model, trials))
    assert io.model_method(back) == "rlda"


def test_fbcsp_checkpoint(band_trials, tmp_path):
    model = fbcsp_train(band_trials)
    back = check_round_trip(model, tmp_path)
    for a, b in zip(model.bands, back.bands):
        np.testing.assert_array_equal(a.filters, b.filters)
        assert a.band == b.band
    np.testing.assert_array_equal(fbcsp_predict(back, band_trials), fbcsp_predict(model, band_trials))
    assert io.model_method(back) == "fbcsp"


def test_convnet_checkpoint(tmp_path):
    model = cn.build_model(cn.ConvNetConfig(n_channels=4, n_samples=167, n_filters=(3, 4, 5, 6), seed=2))
    model.buffers["bn3.running_var"][:] = 1.7
    back = check_round_trip(model, tmp_path)
    assert back.cfg == model.cfg and back.mode == "eval"
    for k in model.params:
        assert back.params[k].tobytes() == model.params[k].astype("<f4").tobytes()
    for k in model.buffers:
        assert back.buffers[k].tobytes() == model.buffers[k].astype("<f4").tobytes()
    x = np.random.default_rng(0).standard_normal((5, 4, 167)).astype(np.float32)
    np.testing.assert_array_equal(cn.presoftmax(back, x), cn.presoftmax(model, x))


def test_checkpoint_errors(trials, tmp_path):
    buf = io.encode_checkpoint("rlda", {"a": 1}, {"w": np.arange(3.0)})
    method, meta, tensors = io.decode_checkpoint(buf)
    assert method == "rlda" and meta == {"a": 1}
    np.testing.assert_array_equal(tensors["w"], [0, 1, 2])
    with pytest.raises(TruncatedFileError):
        io.decode_checkpoint(buf[:-1])
    with pytest.raises(BadMagicError):
        io.decode_checkpoint(b"EEGT" + buf[4:])
    with pytest.raises(VersionMismatchError):
        io.decode_checkpoint(buf[:4] + struct.pack("<I", 2) + buf[8:])
    (tmp_path / "svm.eegm").write_bytes(io.encode_checkpoint("svm", {}, {}))
    with pytest.raises(FileFormatError):
        io.load_model(tmp_path / "svm.eegm")
    with pytest.raises(InvalidInputError):
        io.save_model(object(), tmp_path / "x")


# --- frames -------------------------------------------------------------------------------


def test_frames_round_trip(tmp_path):
    frames = np.random.default_rng(0).integers(0, 256, (4, 3, 5), dtype=np.uint8)
    io.write_frames(frames, tmp_path / "f.frms")
    np.testing.assert_array_equal(io.read_frames(tmp_path / "f.frms"), frames)
    buf = io.encode_frames(frames)
    with pytest.raises(TruncatedFileError):
        io.decode_frames(buf[:-1])
    with pytest.raises(BadMagicError):
        io.decode_frames(b"EEGM" + buf[4:])


# --- maps ---------------------------------------------------------------------------------


def sample_map(rng=np.random.default_rng(1), channels=3):
    values = rng.uniform(-1, 1, (2, channels, 5))
    if channels:
        values[1, 0, 2] = np.nan
    return CorrelationMap(values, "Hz", 0.4, 30, 0.5, tuple(f"C{i}" for i in range(channels)))


def test_map_missing_cell_is_na():
    text = io.format_map(sample_map())
    lines = text.splitlines()
    assert lines[0].startswith("# axis_unit=Hz")
    block = lines.index("class 1")
    assert lines[block + 1].split(",")[3] == "NA"
    assert text.count("NA") == 1


def test_map_round_trip(tmp_path):
    m = sample_map()
    io.export_map(m, tmp_path / "m.txt")
    back = io.parse_map(tmp_path / "m.txt")
    np.testing.assert_allclose(back.values, m.values, rtol=1e-5, equal_nan=True)
    assert (back.axis_unit, back.axis_step, back.n_iterations, back.sigma) == ("Hz", 0.4, 30, 0.5)
    assert back.channel_labels == m.channel_labels


def test_empty_map_is_header_only():
    m = CorrelationMap(np.zeros((2, 0, 5)), "s", 0.004, 30, 0.5)
    text = io.format_map(m)
    assert len(text.strip().splitlines()) == 1
    back = io.parse_map_text(text)
    assert back.values.shape == (2, 0, 5) and back.n_channels == 0


def test_malformed_map_text():
    text = io.format_map(sample_map())
    with pytest.raises(FileFormatError):
        io.parse_map_text(text.replace("class 1", "klass 1"))
    with pytest.raises(FileFormatError):
        io.parse_map_text("\n".join(text.splitlines()[1:]))


# --- config -------------------------------------------------------------------------------


def test_read_config(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("# comment\nn-perm = 1000  # inline\n\nseed=3\nout = a b.txt\n")
    assert io.read_config(path) == {"n_perm": "1000", "seed": "3", "out": "a b.txt"}
    path.write_text("novalue\n")
    with pytest.raises(FileFormatError):
        io.read_config(path)
