import dataclasses

import numpy as np
import pytest

from aircade import backbone as B
from aircade import checkpoint as ckpt
from aircade.attention import ALL_ONES, SPATIAL, TEMPORAL, AttentionMask, make_axis_views
from aircade.backbone import ShapeError, Tape
from aircade.config import ConfigError, ModelConfig
from aircade.model import (
    AirCadeModel,
    CadeCadiComponent,
    cade_forward,
    cadi_forward,
    count_parameters,
    model_forward,
)

from conftest import TINY


def _inputs(cfg, seed=0, batch=None):
    rng = np.random.default_rng(seed)
    lead = () if batch is None else (batch,)
    return (
        rng.normal(size=lead + (cfg.T, cfg.N, cfg.c)),
        rng.normal(size=lead + (cfg.T, cfg.N, cfg.f)),
        rng.normal(size=lead + (cfg.T_P, cfg.N, cfg.f)),
    )


def expected_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count."""
    d, dh = cfg.d_m, cfg.d_m // 4

    def mlp(i, h, o):
        return i * h + h + h * o + o

    total = 0
    if not cfg.no_prompt:
        total += 2 * cfg.N_T * cfg.d_P + 2 * cfg.N * cfg.d_P + (cfg.T + cfg.T_P) * cfg.N * cfg.d_s
    total += mlp(cfg.c, cfg.d_s, cfg.d_s) + 2 * mlp(cfg.f, cfg.d_s, cfg.d_s)
    halves = int(not cfg.no_cade) + int(not cfg.no_es)
    for axis, S, count in ((TEMPORAL, cfg.T, cfg.L1), (SPATIAL, cfg.N, cfg.L2)):
        heads = 2 if axis == TEMPORAL else 1
        attn = 3 * cfg.K_h * d * dh + 2 * S * cfg.d_e + heads * cfg.K_h * d * d + cfg.K_h * d * d
        total += count * halves * (attn + mlp(d, d, d) + 4 * d)
    return total + d * cfg.c + cfg.c


# --- config -------------------------------------------------------------


def test_config_d_m():
    assert ModelConfig(d_s=4, d_P=2).d_m == 8
    assert ModelConfig().d_m == 64


@pytest.mark.parametrize(
    "change",
    [dict(T_P=3), dict(d_s=5), dict(L1=0, L2=0), dict(no_cade=True, no_es=True),
     dict(no_adp=True, no_diff=True), dict(attention_scale_mode="sqrt"), dict(K_h=0)],
)
def test_config_rejects(change):
    with pytest.raises(ConfigError):
        ModelConfig(**{**TINY, **change}).validate()


# --- components ---------------------------------------------------------


def _zero_sublayer(comp, prefix):
    for name, p in comp.named_parameters():
        if name.startswith(prefix + "_attn") or name.startswith(prefix + "_mlp"):
            p.data[...] = 0.0


def _ln(x):
    return B.layer_norm(x, np.ones(x.shape[-1]), np.zeros(x.shape[-1])).data


@pytest.mark.parametrize("axis", [TEMPORAL, SPATIAL])
def test_cade_zero_weights_collapse(rng, tiny_cfg, axis):
    comp = CadeCadiComponent(rng, tiny_cfg, axis)
    _zero_sublayer(comp, "cade")
    x = rng.normal(size=(1, 4, 5, 8))
    h, v = make_axis_views(x, axis), make_axis_views(rng.normal(size=(1, 4, 5, 8)), axis)
    np.testing.assert_allclose(cade_forward(comp, h, v).data, _ln(_ln(v.data)), atol=1e-12)


def test_cadi_zero_weights_collapse(rng, tiny_cfg):
    comp = CadeCadiComponent(rng, tiny_cfg, TEMPORAL)
    _zero_sublayer(comp, "cadi")
    h, o = rng.normal(size=(5, 4, 8)), rng.normal(size=(5, 4, 8))
    np.testing.assert_allclose(cadi_forward(comp, h, o).data, _ln(_ln(o)), atol=1e-12)


def test_cade_gradient_reaches_query_stream(rng, tiny_cfg):
    comp = CadeCadiComponent(rng, tiny_cfg, TEMPORAL)
    h = B.Tensor(rng.normal(size=(5, 4, 8)), requires_grad=True)
    with Tape() as tape:
        loss = B.sum(B.square(cade_forward(comp, h, rng.normal(size=(5, 4, 8)))))
    tape.backward(loss)
    assert np.any(h.grad)


def test_cadi_sensitive_to_future_weather(rng, tiny_cfg):
    comp = CadeCadiComponent(rng, tiny_cfg, SPATIAL)
    h, o = rng.normal(size=(4, 5, 8)), rng.normal(size=(4, 5, 8))
    a = cadi_forward(comp, h, o).data
    b = cadi_forward(comp, h + 0.1 * rng.normal(size=h.shape), o).data
    assert a.shape == o.shape and not np.allclose(a, b)


def test_component_view_mismatch(rng, tiny_cfg):
    comp = CadeCadiComponent(rng, tiny_cfg, TEMPORAL)
    with pytest.raises(ShapeError):
        cade_forward(comp, np.ones((5, 4, 8)), np.ones((4, 5, 8)))


# --- full model ---------------------------------------------------------


def test_component_order(tiny_cfg):
    cfg = dataclasses.replace(tiny_cfg, L1=2, L2=3)
    axes = [c.axis for c in AirCadeModel(cfg).components]
    assert axes == [TEMPORAL] * 2 + [SPATIAL] * 3


def test_forward_shape_and_finite(tiny_model, tiny_cfg):
    y = model_forward(tiny_model, *_inputs(tiny_cfg), 3)
    assert y.shape == (4, 5, 1) and np.all(np.isfinite(y.data))


def test_batched_matches_single(tiny_model, tiny_cfg):
    x, zp, zf = _inputs(tiny_cfg, batch=3)
    batched = model_forward(tiny_model, x, zp, zf, np.array([0, 5, 7])).data
    for i, slot in enumerate((0, 5, 7)):
        single = model_forward(tiny_model, x[i], zp[i], zf[i], slot).data
        np.testing.assert_allclose(batched[i], single, atol=1e-12)


def test_single_station_runs(tiny_cfg):
    cfg = dataclasses.replace(tiny_cfg, N=1)
    y = model_forward(AirCadeModel(cfg, seed=1), *_inputs(cfg), 0)
    assert y.shape == (4, 1, 1) and np.all(np.isfinite(y.data))


def test_forward_deterministic(tiny_cfg):
    a = model_forward(AirCadeModel(tiny_cfg, seed=3), *_inputs(tiny_cfg), 2).data
    b = model_forward(AirCadeModel(tiny_cfg, seed=3), *_inputs(tiny_cfg), 2).data
    assert np.array_equal(a, b)


def test_all_ones_masks_bit_identical(tiny_model, tiny_cfg):
    inputs = _inputs(tiny_cfg)
    plain = model_forward(tiny_model, *inputs, 1).data
    ones = tiny_model.masks_for(AttentionMask(np.ones((4, 4))), AttentionMask(np.ones((5, 5))))
    assert np.array_equal(model_forward(tiny_model, *inputs, 1, ones).data, plain)
    assert np.array_equal(model_forward(tiny_model, *inputs, 1, [ALL_ONES] * 2).data, plain)


def test_mask_count_error(tiny_model, tiny_cfg):
    with pytest.raises(ValueError):
        model_forward(tiny_model, *_inputs(tiny_cfg), 0, [ALL_ONES])


def test_shape_error_names_component(tiny_model, tiny_cfg):
    bad = ModelConfig(**{**TINY, "N": 6})
    with pytest.raises(ShapeError):
        model_forward(tiny_model, *_inputs(bad), 0)


def test_every_stream_and_parameter_receives_gradient(tiny_model, tiny_cfg):
    x, zp, zf = (B.Tensor(a, requires_grad=True) for a in _inputs(tiny_cfg, seed=4))
    with Tape() as tape:
        loss = B.sum(B.square(model_forward(tiny_model, x, zp, zf, 2)))
    tape.backward(loss)
    for t in (x, zp, zf):
        assert np.any(t.grad)
    dead = [n for n, p in tiny_model.named_parameters() if not np.any(p.grad)]
    assert dead == []


def test_station_relabeling_equivariance(tiny_cfg):
    model = AirCadeModel(tiny_cfg, seed=11)
    x, zp, zf = _inputs(tiny_cfg, seed=5)
    before = model_forward(model, x, zp, zf, 4).data
    perm = np.array([3, 0, 4, 1, 2])
    emb = model.emb
    emb.e_S.data[...] = emb.e_S.data[perm]
    emb.e_S_future.data[...] = emb.e_S_future.data[perm]
    emb.e_P.data[...] = emb.e_P.data[:, perm]
    emb.e_P_future.data[...] = emb.e_P_future.data[:, perm]
    for comp in model.components:
        if comp.axis == SPATIAL:
            for layer in (comp.cade_attn, comp.cadi_attn):
                layer.E_1.data[...] = layer.E_1.data[perm]
                layer.E_2.data[...] = layer.E_2.data[perm]
    after = model_forward(model, x[:, perm], zp[:, perm], zf[:, perm], 4).data
    np.testing.assert_allclose(after, before[:, perm], atol=1e-12)


# --- parameter counts ---------------------------------------------------


@pytest.mark.parametrize(
    "change",
    [{}, dict(K_h=3), dict(L1=2, L2=0), dict(no_prompt=True), dict(no_es=True),
     dict(no_cade=True), dict(no_adp=True), dict(c=2, f=5)],
)
def test_count_closed_form(change):
    cfg = ModelConfig(**{**TINY, **change})
    assert count_parameters(AirCadeModel(cfg)) == expected_count(cfg)


def test_count_default_config():
    cfg = ModelConfig()
    assert expected_count(cfg) == 1_698_785


def test_predictor_count(tiny_model):
    assert count_parameters(tiny_model.predictor) == 8 * 1 + 1


def test_count_head_delta():
    a = count_parameters(AirCadeModel(ModelConfig(**TINY)))
    b = count_parameters(AirCadeModel(ModelConfig(**{**TINY, "K_h": 4})))
    d = 8
    per_head = {TEMPORAL: 3 * d * 2 + 2 * d * d + d * d, SPATIAL: 3 * d * 2 + d * d + d * d}
    # two attention layers per component, one component per axis
    assert b - a == 2 * (per_head[TEMPORAL] + per_head[SPATIAL]) * (4 - 2)


def test_count_prompt_delta():
    cfg = ModelConfig(**TINY)
    a = count_parameters(AirCadeModel(cfg))
    b = count_parameters(AirCadeModel(dataclasses.replace(cfg, no_prompt=True)))
    tables = 2 * 8 * 2 + 2 * 5 * 2 + 4 * 5 * 4 * 2
    assert a - b == tables


# --- state dict and checkpoints -----------------------------------------


def test_state_dict_round_trip(tiny_cfg):
    a, b = AirCadeModel(tiny_cfg, seed=1), AirCadeModel(tiny_cfg, seed=2)
    b.load_state_dict(a.state_dict())
    inputs = _inputs(tiny_cfg)
    assert np.array_equal(model_forward(a, *inputs, 0).data, model_forward(b, *inputs, 0).data)


def test_state_dict_mismatch(tiny_model):
    state = tiny_model.state_dict()
    state.pop("predictor.bias")
    with pytest.raises(KeyError):
        tiny_model.load_state_dict(state)


def test_checkpoint_byte_exact_round_trip(tiny_model):
    buf = ckpt.checkpoint_bytes(tiny_model, {"note": "x"})
    model, meta = ckpt.checkpoint_from_bytes(buf)
    assert meta["note"] == "x" and meta["model"]["N"] == 5
    assert ckpt.checkpoint_bytes(model, {"note": "x"}) == buf
    for (n1, p1), (n2, p2) in zip(tiny_model.named_parameters(), model.named_parameters()):
        assert n1 == n2 and np.array_equal(p1.data, p2.data)


def test_checkpoint_file(tmp_path, tiny_model):
    path = tmp_path / "m.acde"
    ckpt.save_checkpoint(path, tiny_model)
    assert path.read_bytes()[:4] == b"ACDE"
    model, _ = ckpt.load_checkpoint(path)
    assert count_parameters(model) == count_parameters(tiny_model)


def test_checkpoint_manifest_offsets(tiny_model):
    buf = ckpt.checkpoint_bytes(tiny_model)
    _, manifest, start = ckpt.read_header(buf)
    name, shape, offset = manifest[3]
    stored = np.frombuffer(buf, "<f8", int(np.prod(shape)), start + offset).reshape(shape)
    assert np.array_equal(stored, dict(tiny_model.named_parameters())[name].data)


@pytest.mark.parametrize(
    "corrupt, message",
    [
        (lambda b: b"XXXX" + b[4:], "magic"),
        (lambda b: b[:4] + (2).to_bytes(4, "little") + b[8:], "version"),
        (lambda b: b[:-8], "truncated"),
        (lambda b: b[:20], "truncated"),
        (lambda b: b + b"\0", "trailing"),
    ],
)
def test_checkpoint_corruption(tiny_model, corrupt, message):
    with pytest.raises(ckpt.CheckpointError, match=message):
        ckpt.checkpoint_from_bytes(corrupt(ckpt.checkpoint_bytes(tiny_model)))
