import struct

import numpy as np
import pytest

from src.ndgrad.checkpoint import (
    CHECKPOINT_MAGIC, MASK_MAGIC, decode_container, encode_container, load_container, save_container,
)
from src.ndgrad.errors import CheckpointFormatError, NonFiniteError, ShapeError
from src.ndgrad.nn import Parameter
from src.ndgrad.optim import Adam, AdamState, adam_step, clip_grad_norm


class TestAdam:
    def test_zero_gradient_leaves_parameters(self):
        params = {"w": np.array([1.0, -2.0])}
        updated, state = adam_step(AdamState(lr=0.1), params, {"w": np.zeros(2)})
        np.testing.assert_array_equal(updated["w"], params["w"])
        assert state.step_count == 1

    def test_first_step_closed_form(self):
        updated, _ = adam_step(AdamState(lr=0.1), {"w": np.array([0.0])}, {"w": np.array([1.0])})
        assert updated["w"][0] == pytest.approx(-0.1 / (1.0 + 1e-8), rel=1e-12)

    def test_constant_gradient_decreases_monotonically(self):
        state = AdamState(lr=0.1)
        values = [np.array([0.0])]
        for _ in range(2):
            updated, state = adam_step(state, {"w": values[-1]}, {"w": np.array([1.0])})
            values.append(updated["w"])
        assert values[0][0] > values[1][0] > values[2][0]
        assert state.step_count == 2

    def test_non_finite_gradient_aborts_without_side_effects(self):
        state = AdamState()
        with pytest.raises(NonFiniteError):
            adam_step(state, {"a": np.zeros(1), "b": np.zeros(1)}, {"a": np.ones(1), "b": np.array([np.nan])})
        assert state.step_count == 0
        assert state.first_moment == {}

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            adam_step(AdamState(), {"w": np.zeros(2)}, {"w": np.zeros(3)})

    def test_optimizer_state_round_trip(self):
        p = Parameter(np.array([1.0, 2.0]))
        optimizer = Adam([("p", p)], lr=0.01)
        p.grad = np.array([0.5, -0.5])
        optimizer.step()
        state = optimizer.state_dict()
        assert set(state) == {"optim.step", "optim.m.p", "optim.v.p"}

        restored = Adam([("p", Parameter(p.data.copy()))], lr=0.01)
        restored.load_state_dict(state)
        assert restored.state.step_count == 1
        np.testing.assert_array_equal(restored.state.first_moment["p"], optimizer.state.first_moment["p"])

    def test_untracked_parameters_are_untouched(self):
        tracked, other = Parameter(np.ones(2)), Parameter(np.ones(2))
        tracked.grad, other.grad = np.ones(2), np.ones(2)
        Adam([("tracked", tracked)], lr=0.1).step()
        np.testing.assert_array_equal(other.data, np.ones(2))
        assert np.all(tracked.data < 1.0)


class TestClipGradNorm:
    def test_scales_to_max_norm(self):
        a, b = Parameter(np.zeros(2)), Parameter(np.zeros(1))
        a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
        norm = clip_grad_norm([a, b], 1.0)
        assert norm == pytest.approx(5.0)
        total = np.sqrt(np.sum(a.grad ** 2) + np.sum(b.grad ** 2))
        assert total == pytest.approx(1.0, rel=1e-9)

    def test_small_gradients_unchanged(self):
        a = Parameter(np.zeros(2))
        a.grad = np.array([0.3, 0.4])
        clip_grad_norm([a], 5.0)
        np.testing.assert_array_equal(a.grad, [0.3, 0.4])


class TestContainer:
    def test_byte_exact_round_trip(self, tmp_path, rng):
        tensors = {"drl.encoder.w": rng.normal(size=(2, 3, 3)), "scalar": np.array(1.5), "v": np.arange(4.0)}
        blob = encode_container(tensors)
        decoded = decode_container(blob)
        for name, value in tensors.items():
            np.testing.assert_array_equal(decoded[name], value)
        assert encode_container(decoded) == blob

        path = save_container(tmp_path / "model.cldr", tensors)
        assert path.read_bytes() == blob
        assert list(load_container(path)) == list(tensors)

    def test_header_layout(self):
        blob = encode_container({"ab": np.array([1.0, 2.0])})
        assert blob[:4] == b"CLDR"
        assert struct.unpack_from("<II", blob, 4) == (1, 1)
        assert struct.unpack_from("<I", blob, 12) == (2,)
        assert blob[16:18] == b"ab"
        assert struct.unpack_from("<II", blob, 18) == (1, 2)
        assert struct.unpack_from("<2d", blob, 26) == (1.0, 2.0)

    def test_mask_container_uses_bytes(self):
        packed = np.array([[255, 1], [0, 7]], dtype=np.uint8)
        blob = encode_container({"m": packed}, MASK_MAGIC)
        assert blob[:4] == b"CLDM"
        decoded = decode_container(blob, MASK_MAGIC)["m"]
        assert decoded.dtype == np.uint8
        np.testing.assert_array_equal(decoded, packed)

    @pytest.mark.parametrize("mutate, message", [
        (lambda b: b"XXXX" + b[4:], "magic"),
        (lambda b: b[:4] + struct.pack("<I", 2) + b[8:], "version"),
        (lambda b: b[:-3], "truncated"),
        (lambda b: b + b"\x00", "trailing"),
    ])
    def test_malformed_containers(self, mutate, message):
        blob = encode_container({"w": np.ones(3)})
        with pytest.raises(CheckpointFormatError, match=message):
            decode_container(mutate(blob))

    def test_wrong_magic_for_kind(self):
        with pytest.raises(CheckpointFormatError):
            decode_container(encode_container({"w": np.ones(1)}), MASK_MAGIC)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_container(tmp_path / "absent.cldr", CHECKPOINT_MAGIC)
