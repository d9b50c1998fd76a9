import numpy as np
import pytest

from azsl import nn, wire


def sample_params():
    specs = [nn.LayerSpec(4, 6, nn.ACT_LEAKY_RELU, 0.2), nn.LayerSpec(6, 3, nn.ACT_RELU)]
    return nn.mlp_init(specs, nn.ROLE_GENERATOR, seed=123456789012)


class TestMessageRoundTrips:
    def test_feedback_request(self):
        rng = np.random.default_rng(0)
        req = wire.FeedbackRequest(
            scenario=wire.SCENARIO_WHITE,
            batch=rng.normal(size=(5, 7)),
            cond_labels=rng.integers(0, 4, size=5),
            want_softmax=False,
        )
        back = wire.decode_feedback_request(wire.encode_feedback_request(req))
        assert back.scenario == req.scenario
        assert back.want_softmax is False
        assert np.array_equal(back.batch, req.batch)
        assert np.array_equal(back.cond_labels, req.cond_labels)

    def test_feedback_response_white(self):
        rng = np.random.default_rng(1)
        resp = wire.FeedbackResponse(
            softmax=rng.random((4, 3)),
            reg_value=0.125,
            reg_grad=rng.normal(size=(4, 7)),
            ce_value=2.5,
            ce_grad=rng.normal(size=(4, 7)),
        )
        back = wire.decode_feedback_response(wire.encode_feedback_response(resp))
        assert np.array_equal(back.softmax, resp.softmax)
        assert back.reg_value == resp.reg_value
        assert np.array_equal(back.ce_grad, resp.ce_grad)
        assert back.risk_tags["ce_grad"] == wire.RISK_MID
        assert back.risk == wire.RISK_MID

    def test_feedback_response_black_has_no_ce(self):
        resp = wire.FeedbackResponse(softmax=np.ones((2, 2)) / 2, reg_value=0.0, reg_grad=np.zeros((2, 3)))
        back = wire.decode_feedback_response(wire.encode_feedback_response(resp))
        assert back.ce_value is None and back.ce_grad is None
        assert back.risk == wire.RISK_LOW
        assert set(back.risk_tags) == {"softmax", "reg_value", "reg_grad"}

    def test_omitted_softmax(self):
        resp = wire.FeedbackResponse(softmax=None, reg_value=1.0, reg_grad=np.zeros((2, 3)))
        back = wire.decode_feedback_response(wire.encode_feedback_response(resp))
        assert back.softmax is None

    def test_params_round_trip_identical_forward(self):
        params = sample_params()
        back = wire.decode_params(wire.encode_params(params))
        assert back.role == params.role
        assert back.seed == params.seed
        assert back.layers == params.layers
        x = np.random.default_rng(2).normal(size=(3, 4))
        assert np.array_equal(nn.mlp_forward(params, x)[0], nn.mlp_forward(back, x)[0])

    def test_params_blob_size_formula(self):
        params = sample_params()
        blob = wire.encode_params(params)
        assert len(blob) == wire.params_blob_size(params.layers)
        n_params = params.n_params()
        header = len(blob) - 8 * n_params
        assert len(blob) == header + 8 * n_params  # every weight is one f64

    def test_error_round_trip(self):
        code, msg = wire.decode_error(wire.encode_error(wire.ERR_PROTOCOL, "nope"))
        assert (code, msg) == (wire.ERR_PROTOCOL, "nope")


class TestFraming:
    def read_from(self, blob: bytes):
        view = {"off": 0}

        def read_exact(n):
            out = blob[view["off"] : view["off"] + n]
            view["off"] += n
            return out

        return read_exact

    def test_frame_round_trip(self):
        payload = b"hello payload"
        kind, back = wire.read_frame(self.read_from(wire.frame(wire.KIND_ERROR, payload)))
        assert kind == wire.KIND_ERROR
        assert back == payload

    def test_bad_magic(self):
        blob = b"XXXX" + bytes([1, 1]) + (0).to_bytes(4, "little")
        with pytest.raises(wire.ProtocolError) as exc:
            wire.read_frame(self.read_from(blob))
        assert exc.value.code == wire.ERR_BAD_FRAME

    def test_bad_version(self):
        blob = wire.MAGIC + bytes([9, 1]) + (0).to_bytes(4, "little")
        with pytest.raises(wire.ProtocolError) as exc:
            wire.read_frame(self.read_from(blob))
        assert exc.value.code == wire.ERR_BAD_VERSION

    def test_oversized_payload_rejected(self):
        blob = wire.MAGIC + bytes([1, 1]) + (wire.MAX_PAYLOAD + 1).to_bytes(4, "little")
        with pytest.raises(wire.ProtocolError) as exc:
            wire.read_frame(self.read_from(blob))
        assert exc.value.code == wire.ERR_BAD_FRAME
        with pytest.raises(wire.ProtocolError):
            wire.frame(wire.KIND_ERROR, b"\x00" * (wire.MAX_PAYLOAD + 1))

    def test_trailing_bytes_rejected(self):
        payload = wire.encode_weight_request(wire.SCENARIO_WHITE) + b"junk"
        with pytest.raises(wire.ProtocolError, match="trailing"):
            wire.decode_weight_request(payload)

    def test_truncated_payload_rejected(self):
        payload = wire.encode_feedback_request(
            wire.FeedbackRequest(wire.SCENARIO_BLACK, np.ones((2, 2)), [0, 1])
        )
        with pytest.raises(wire.ProtocolError):
            wire.decode_feedback_request(payload[:-3])
