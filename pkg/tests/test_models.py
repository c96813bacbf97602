import numpy as np
import pytest

from gripstiff.errors import ConfigError, ShapeError
from gripstiff.models import (
    REFERENCE_ARCHITECTURE, Architecture, ModelKind, ModelSpec, build, load_model, param_count,
)
from gripstiff.nn import gradient_check

TINY = Architecture(conv_filters=(4, 5, 6), recurrent_conv_filters=(4, 5, 5), units=3,
                    head=(6, 4, 1), input_length=16, channels=12)


def conv_params(width, cin, cout):
    return width * cin * cout + cout


def dense_params(i, o):
    return i * o + o


def lstm_params(d, u):
    return 4 * u * (d + u + 1)


def head_params(width_in):
    widths = (width_in, 512, 256, 128, 64, 1)
    return sum(dense_params(a, b) for a, b in zip(widths, widths[1:]))


EXPECTED_COUNTS = {
    ModelKind.CONV: (conv_params(3, 12, 128) + conv_params(3, 128, 256) + conv_params(3, 256, 512)
                     + head_params(25 * 512)),
    ModelKind.CONV_LSTM: (conv_params(3, 12, 128) + conv_params(3, 128, 256) + conv_params(3, 256, 256)
                          + lstm_params(256, 128) + lstm_params(128, 128) + head_params(128)),
    ModelKind.CONV_BILSTM: (conv_params(3, 12, 128) + conv_params(3, 128, 256) + conv_params(3, 256, 256)
                            + 2 * lstm_params(256, 128) + head_params(256)),
}


@pytest.fixture(scope="module")
def full_models():
    return {kind: build(ModelSpec(kind, seed=0)) for kind in ModelKind}


def test_first_conv_and_last_dense_counts(full_models):
    m = full_models[ModelKind.CONV]
    assert m.params["conv1.kernel"].size + m.params["conv1.bias"].size == 4736
    assert m.params["dense5.weights"].size + m.params["dense5.bias"].size == 65


@pytest.mark.parametrize("kind", list(ModelKind))
def test_param_counts(full_models, kind):
    assert param_count(full_models[kind]) == EXPECTED_COUNTS[kind]
    assert param_count(build(ModelSpec(kind, seed=123))) == EXPECTED_COUNTS[kind]


def test_reference_layer_widths():
    a = REFERENCE_ARCHITECTURE
    assert a.conv_filters == (128, 256, 512)
    assert a.recurrent_conv_filters == (128, 256, 256)
    assert a.units == 128
    assert a.head == (512, 256, 128, 64, 1)


@pytest.mark.parametrize("kind,filters", [(ModelKind.CONV, (128, 256, 512)),
                                          (ModelKind.CONV_LSTM, (128, 256, 256)),
                                          (ModelKind.CONV_BILSTM, (128, 256, 256))])
def test_stride_chain(full_models, kind, filters):
    shapes = full_models[kind].shapes(batch=2)
    assert [shapes[f"conv{i}"] for i in (1, 2, 3)] == [(2, 100, filters[0]), (2, 50, filters[1]), (2, 25, filters[2])]
    assert [shapes[f"dense{i}"][1] for i in range(1, 6)] == [512, 256, 128, 64, 1]


def test_head_inputs(full_models):
    assert full_models[ModelKind.CONV].shapes()["flatten"] == (1, 12800)
    lstm_w = full_models[ModelKind.CONV_LSTM].shapes()["final"][1]
    bi_w = full_models[ModelKind.CONV_BILSTM].shapes()["final"][1]
    assert (lstm_w, bi_w) == (128, 256)
    assert full_models[ModelKind.CONV_LSTM].shapes()["lstm2"] == (1, 25, 128)


@pytest.mark.parametrize("kind", list(ModelKind))
def test_forward_contract(full_models, kind):
    m = full_models[kind]
    ep = np.random.default_rng(1).standard_normal((1, 200, 12))
    y1 = m.forward(ep)
    assert y1.shape == (1, 1) and np.all(np.isfinite(y1))
    y2 = m.forward(np.concatenate([ep, ep]))
    assert y2[0, 0] == y2[1, 0]
    with pytest.raises(ShapeError):
        m.forward(np.zeros((1, 199, 12)))
    with pytest.raises(ShapeError):
        m.forward(np.zeros((200, 12)))


@pytest.mark.parametrize("kind", list(ModelKind))
def test_init_is_seeded(kind):
    a, b, c = (build(ModelSpec(kind, seed=s, arch=TINY)) for s in (5, 5, 6))
    for name in a.params:
        assert np.array_equal(a.params[name].value, b.params[name].value)
        assert a.params[name].shape == c.params[name].shape
    assert any(not np.array_equal(a.params[n].value, c.params[n].value) for n in a.params)


@pytest.mark.parametrize("kind", list(ModelKind))
def test_no_dead_branch(full_models, kind):
    m = full_models[kind]
    x = np.random.default_rng(2).standard_normal((4, 200, 12))
    m.zero_grad()
    y = m.forward(x)
    m.backward(np.ones_like(y))
    for name, p in m.params.items():
        assert np.any(p.grad != 0), name
    m.zero_grad()


@pytest.mark.parametrize("kind", list(ModelKind))
def test_tiny_model_gradients(kind):
    m = build(ModelSpec(kind, seed=3, arch=TINY))
    x = np.random.default_rng(4).standard_normal((2, 16, 12))
    rep = gradient_check(m, x)
    assert rep.passed(1e-5), rep.errors


def test_kind_parsing():
    assert ModelKind.parse("conv-bilstm") is ModelKind.CONV_BILSTM
    assert ModelKind.parse("ConvLstmNet") is ModelKind.CONV_LSTM
    assert ModelKind.parse("conv") is ModelKind.CONV
    with pytest.raises(ConfigError):
        ModelKind.parse("transformer")


def test_spec_round_trip_and_checkpoint(tmp_path):
    spec = ModelSpec("conv-lstm", seed=9, arch=TINY)
    assert ModelSpec.from_dict(spec.to_dict()) == spec
    m = build(spec)
    path = tmp_path / "m.sgnn"
    m.save(path, {"fold": 1})
    back, header = load_model(path)
    assert header["fold"] == 1 and back.spec == spec
    x = np.random.default_rng(5).standard_normal((3, 16, 12))
    assert np.array_equal(back.predict(x), m.predict(x))


def test_load_state_dict_rejects_mismatch():
    a = build(ModelSpec("conv", arch=TINY))
    b = build(ModelSpec("conv-bilstm", arch=TINY))
    with pytest.raises(ConfigError):
        a.load_state_dict(b.state_dict())


def test_predict_matches_forward_in_chunks():
    m = build(ModelSpec("conv-bilstm", seed=1, arch=TINY))
    x = np.random.default_rng(6).standard_normal((7, 16, 12))
    assert np.allclose(m.predict(x, batch_size=3), m.forward(x)[:, 0], rtol=0, atol=1e-14)
