"""Backbone network: construction, shapes, config validation."""

import numpy as np
import pytest

from fbnet.labels import ClassScheme
from fbnet.network import ConfigError, ModelConfig, build
from fbnet.tensor import ShapeError, Tensor

SCHEME = ClassScheme(total=8, foreground_ids=(3, 4, 5, 6, 7))


def _config(**kw):
    return ModelConfig(scheme=SCHEME, **kw)


def test_build_is_bit_deterministic():
    a = build(_config(), seed=11).parameters()
    b = build(_config(), seed=11).parameters()
    assert list(a) == list(b)
    for name in a:
        assert a[name].data.tobytes() == b[name].data.tobytes()
    c = build(_config(), seed=12).parameters()
    assert any(a[n].data.tobytes() != c[n].data.tobytes() for n in a)


def test_default_parameter_names():
    params = build(_config(), seed=0).parameters()
    assert list(params) == [
        # stage2 enters at stride 4: two stride-2 convs
        "backbone.stage2.conv0.weight",
        "backbone.stage2.conv0.bias",
        "backbone.stage2.conv1.weight",
        "backbone.stage2.conv1.bias",
        "backbone.stage2.scale",
        "backbone.stage3.conv0.weight",
        "backbone.stage3.conv0.bias",
        "backbone.stage3.scale",
        "backbone.stage4.conv0.weight",
        "backbone.stage4.conv0.bias",
        "backbone.stage4.scale",
        "backbone.stage5.conv0.weight",
        "backbone.stage5.conv0.bias",
        "backbone.stage5.scale",
        "head.weight",
        "head.bias",
        "fbnet.res5.spatial_sensor.weight",
        "fbnet.res5.spatial_sensor.bias",
        "fbnet.res5.channel_sensor.weight",
        "fbnet.res5.channel_sensor.bias",
        "fbnet.res5.aux.weight",
        "fbnet.res5.aux.bias",
    ]


def test_parameter_count_closed_form():
    cfg = _config(convs_per_stage=2)
    params = build(cfg, seed=0).parameters()
    expect = 0
    for k, convs in enumerate(cfg.conv_plan()):
        for in_ch, out_ch, _, _ in convs:
            expect += out_ch * in_ch * 9 + out_ch  # 3x3 kernel + bias
        expect += cfg.stage_channels[k]  # per-stage scale
    expect += 8 * 64 + 8  # 1x1 head
    c = 64
    expect += (c + 1) + (c * c + c) + (5 * c + 5)  # sensors + aux head
    assert sum(p.data.size for p in params.values()) == expect


def test_forward_shapes_and_aux():
    model = build(_config(), seed=0)
    out = model.forward(np.zeros((3, 96, 96), np.float32))
    assert out.z.data.shape == (8, 96, 96)
    assert [(name, p.data.shape) for name, p in out.aux] == [("res5", (5, 12, 12))]
    assert out.xo is None


def test_batched_forward_matches_unbatched():
    rng = np.random.default_rng(0)
    imgs = rng.uniform(size=(2, 3, 32, 32)).astype(np.float32)
    model = build(_config(), seed=1)
    batched = model.forward(imgs)
    assert batched.z.data.shape == (2, 8, 32, 32)
    single = model.forward(imgs[0])
    np.testing.assert_allclose(batched.z.data[0], single.z.data, atol=2e-5)


def test_no_injection_is_a_plain_fcn():
    model = build(_config(inject=()), seed=0)
    out = model.forward(np.zeros((3, 32, 32), np.float32))
    assert out.aux == []
    assert all(not n.startswith("fbnet.") for n in model.parameters())


def test_all_stage_injection():
    model = build(_config(inject=("res2", "res3", "res4", "res5")), seed=0)
    out = model.forward(np.zeros((3, 96, 96), np.float32))
    assert [(name, p.data.shape) for name, p in out.aux] == [
        ("res2", (5, 24, 24)),
        ("res3", (5, 12, 12)),
        ("res4", (5, 12, 12)),
        ("res5", (5, 12, 12)),
    ]


def test_capture_xo():
    model = build(_config(), seed=0)
    out = model.forward(np.zeros((3, 32, 32), np.float32), capture_xo=True)
    assert set(out.xo) == {"res5"}
    assert out.xo["res5"].data.shape == (64, 4, 4)
    # aux_only blocks have no modulated branch to capture
    model = build(_config(block_variant="aux_only"), seed=0)
    assert model.forward(np.zeros((3, 32, 32), np.float32), capture_xo=True).xo == {}


def test_indivisible_input_rejected():
    model = build(_config(), seed=0)
    with pytest.raises(ValueError):
        model.forward(np.zeros((3, 92, 92), np.float32))


def test_input_shape_and_dtype_errors():
    model = build(_config(), seed=0)
    with pytest.raises(ShapeError):
        model.forward(np.zeros((1, 96, 96), np.float32))  # wrong channel count
    with pytest.raises(ShapeError):
        model.forward(np.zeros((96, 96), np.float32))
    with pytest.raises(ShapeError):
        model.forward(Tensor(np.zeros((3, 96, 96), np.float64)))  # dtype mismatch


def test_conv_plan_stride_ratios():
    plan = _config().conv_plan()
    assert [[c[2] for c in stage] for stage in plan] == [[2, 2], [2], [1], [1]]
    assert [[c[3] for c in stage] for stage in plan] == [[1, 1], [1], [2], [4]]
    # entering at stride 2 means a single stride-2 conv in the first stage
    plan = _config(stage_strides=(2, 4, 4, 4)).conv_plan()
    assert [[c[2] for c in stage] for stage in plan] == [[2], [2], [1], [1]]
    # extra depth appends stride-1 convs at the stage's dilation
    plan = _config(convs_per_stage=3).conv_plan()
    assert [len(stage) for stage in plan] == [4, 3, 3, 3]
    assert plan[3][-1] == (64, 64, 1, 4)


def test_config_validation():
    with pytest.raises(ConfigError):
        _config(stage_strides=(4, 12, 12, 12))  # ratio 3 is not buildable
    with pytest.raises(ConfigError):
        _config(stage_strides=(8, 4, 4, 4))  # stride may never shrink
    with pytest.raises(ConfigError):
        _config(stage_channels=(16, 32, 64))
    with pytest.raises(ConfigError):
        _config(inject=("res6",))
    with pytest.raises(ConfigError):
        _config(inject=("res5", "res5"))
    with pytest.raises(ConfigError):
        _config(block_variant="bogus")
    with pytest.raises(ConfigError):
        _config(convs_per_stage=0)
    with pytest.raises(ConfigError):
        _config(stage_channels=(16, 32, 64, 0))


def test_config_dict_roundtrip():
    cfg = _config(inject=("res4", "res5"), convs_per_stage=2, block_variant="sensors_only")
    again = ModelConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert again.scheme.foreground_ids == (3, 4, 5, 6, 7)


def test_max_stride():
    assert _config().max_stride == 8
    assert _config(stage_strides=(2, 4, 4, 4)).max_stride == 4
