"""Classifier forward semantics and the binary checkpoint format."""

import numpy as np
import numpy.testing as npt
import pytest

from cloneguard.nets import (MAGIC, CheckpointError, Classifier, f32_grid,
                             load_checkpoint, save_checkpoint)


def test_same_seed_same_dims_bit_identical_init():
    a = Classifier([4, 8, 3], seed=11)
    b = Classifier([4, 8, 3], seed=11)
    npt.assert_array_equal(a.params.flatten(), b.params.flatten())


def test_different_seed_different_init():
    a = Classifier([4, 8, 3], seed=11)
    b = Classifier([4, 8, 3], seed=12)
    assert not np.array_equal(a.params.flatten(), b.params.flatten())


def test_zero_params_give_uniform_rows(rng):
    net = Classifier([5, 7, 4], seed=0)
    net.params.assign_flat(np.zeros(net.num_params))
    probs = net.predict_proba(rng.normal(size=(6, 5))).data
    npt.assert_allclose(probs, np.full((6, 4), 0.25), atol=1e-12)


def test_rows_sum_to_one(rng):
    net = Classifier([5, 9, 4], seed=3)
    probs = net.predict_proba(rng.normal(size=(10, 5))).data
    npt.assert_allclose(probs.sum(axis=1), np.ones(10), atol=1e-6)
    assert np.all(probs >= 0)


def test_forward_matches_hand_rolled_oracle(rng):
    net = Classifier([3, 4, 2], activation="tanh", seed=5)
    x = rng.normal(size=(7, 3))
    h = np.tanh(x @ net.params.tensor("w0").data + net.params.tensor("b0").data)
    z = h @ net.params.tensor("w1").data + net.params.tensor("b1").data
    e = np.exp(z - z.max(axis=1, keepdims=True))
    expected = e / e.sum(axis=1, keepdims=True)
    npt.assert_allclose(net.predict_proba(x).data, expected, atol=1e-10)
    # tracked and untracked paths agree
    npt.assert_allclose(net.predict_proba(x, track=True).data, expected, atol=1e-10)


def _fixed_proba_net(probs):
    from cloneguard.autodiff import Tensor

    class _Stub(Classifier):
        def predict_proba(self, x, track=False):
            return Tensor(probs)

    return _Stub([2, probs.shape[1]], seed=0)


def test_hard_label_argmax():
    net = _fixed_proba_net(np.array([[0.1, 0.7, 0.2]]))
    npt.assert_array_equal(net.hard_label(np.zeros((1, 2))).data,
                           [[0.0, 1.0, 0.0]])


def test_hard_label_tie_breaks_to_lowest_class():
    net = _fixed_proba_net(np.array([[0.5, 0.5]]))
    npt.assert_array_equal(net.hard_label(np.zeros((1, 2))).data, [[1.0, 0.0]])


def test_hard_label_consistent_with_predict_proba(rng):
    net = Classifier([4, 6, 3], seed=9)
    x = rng.normal(size=(20, 4))
    probs = net.predict_proba(x).data
    expected = np.eye(3)[probs.argmax(axis=1)]
    npt.assert_array_equal(net.hard_label(x).data, expected)


def test_input_shape_validation():
    net = Classifier([4, 3], seed=0)
    with pytest.raises(ValueError, match=r"\(B, 4\)"):
        net.logits(np.zeros((2, 5)))


def test_f32_grid_round_trip_via_checkpoint(tmp_path):
    net = Classifier([3, 5, 2], seed=21)
    path = tmp_path / "m.ckpt"
    save_checkpoint(net, path)
    loaded, _ = load_checkpoint(path)
    # parameters live on the float32 grid, so a float32 payload is lossless
    npt.assert_array_equal(loaded.params.flatten(), net.params.flatten())
    npt.assert_array_equal(f32_grid(net.params.flatten()), net.params.flatten())


def test_save_load_save_byte_identical(tmp_path):
    net = Classifier([3, 5, 2], seed=22)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(net, p1, metadata={"note": 1})
    loaded, meta = load_checkpoint(p1)
    assert meta == {"note": 1}
    save_checkpoint(loaded, p2, metadata=meta)
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"XXXX" + b"\x00" * 32)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)
    assert MAGIC == b"INI1"


def test_edited_header_rejected(tmp_path):
    net = Classifier([3, 5, 2], seed=23)
    path = tmp_path / "m.ckpt"
    save_checkpoint(net, path)
    blob = path.read_bytes()
    tampered = blob.replace(b'"layer_dims": [3, 5, 2]', b'"layer_dims": [3, 6, 2]')
    assert tampered != blob
    path.write_bytes(tampered)
    with pytest.raises(CheckpointError, match="digest"):
        load_checkpoint(path)


def test_truncated_payload_rejected(tmp_path):
    net = Classifier([3, 5, 2], seed=24)
    path = tmp_path / "m.ckpt"
    save_checkpoint(net, path)
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_corrupted_payload_rejected(tmp_path):
    net = Classifier([3, 5, 2], seed=25)
    path = tmp_path / "m.ckpt"
    save_checkpoint(net, path)
    blob = bytearray(path.read_bytes())
    blob[-8] ^= 0xFF    # flip a payload byte, keep length intact
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(path)


def test_clone_architecture_shares_dims_not_params():
    net = Classifier([4, 8, 3], seed=1)
    other = net.clone_architecture(seed=99)
    assert other.layer_dims == net.layer_dims
    assert not np.array_equal(other.params.flatten(), net.params.flatten())
