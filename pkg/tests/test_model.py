import numpy as np
import pytest

from app.errors import ConfigurationError
from app.network.model import CascadeModel, ModelArchitecture, model_forward, restore_image
from app.network.units import CfConvUnit, ScnauUnit
from app.tensor import Parameter, Tensor, backward, concat_channels, mse_loss, rng_for


@pytest.fixture(scope="module")
def small_model():
    return CascadeModel(ModelArchitecture(width_scale="1/8", num_blocks=2, identity_init=False, seed=3))


def test_full_width_layer_sizes():
    unit = CfConvUnit("cf", 64, 32, 64, 32, rng_for(0, 0))
    assert unit.concat_width == 104
    assert unit.std_conv_2.spec.in_channels == 104
    assert unit.std_conv_2.spec.out_channels == 64
    assert unit.dia_conv.spec.dilation == 2 and unit.dia_conv.spec.padding == 2
    attention = ScnauUnit("att", 64, 32, (256, 512), rng_for(0, 1))
    assert [layer.weight.shape for layer in attention.channel_layers] == [(64, 256), (256, 512), (512, 64)]


def test_feature_block_keeps_extent_and_width(rng):
    unit = CfConvUnit("cf", 64, 32, 64, 32, rng_for(0, 0))
    attention = ScnauUnit("att", 64, 32, (256, 512), rng_for(0, 1))
    out = attention(unit(Tensor(rng.standard_normal((1, 64, 40, 40)))))
    assert out.shape == (1, 64, 40, 40)


def test_zero_input_gives_zero_output():
    unit = CfConvUnit("cf", 8, 8, 8, 8, rng_for(1, 0))
    attention = ScnauUnit("att", 8, 8, (8, 16), rng_for(1, 1))
    out = attention(unit(Tensor(np.zeros((1, 8, 6, 6)))))
    assert np.all(out.data == 0.0)


def test_cf_conv_is_fusion_of_its_branches(rng):
    unit = CfConvUnit("cf", 8, 8, 8, 8, rng_for(2, 0))
    x = Tensor(rng.standard_normal((2, 8, 7, 9)))
    dilated, standard, subpixel = unit.branches(x)
    assert dilated.shape == (2, 8, 7, 9)
    assert standard.shape == (2, 8, 7, 9)
    assert subpixel.shape == (2, 2, 7, 9)
    fused = unit.std_conv_2(concat_channels([dilated, standard, subpixel]))
    np.testing.assert_array_equal(unit(x).data, fused.data)


def test_attention_is_product_of_masks(rng):
    attention = ScnauUnit("att", 8, 8, (8, 16), rng_for(3, 0))
    attention.capture_masks = True
    x = rng.standard_normal((2, 8, 5, 5))
    out = attention(Tensor(x)).data
    spatial, channel = attention.last_masks
    assert spatial.shape == x.shape and channel.shape == (2, 8)
    for mask in (spatial, channel):
        assert np.all((mask > 0) & (mask < 1))
    np.testing.assert_allclose(out, spatial * (channel[:, :, None, None] * x), rtol=1e-12)
    assert np.all(np.abs(out) <= np.abs(x))


@pytest.mark.parametrize("fill", [1e3, -1e3])
def test_attention_masks_stay_open_for_huge_inputs(fill):
    attention = ScnauUnit("att", 8, 8, (8, 16), rng_for(3, 0))
    attention.capture_masks = True
    attention(Tensor(np.full((1, 8, 6, 6), fill)))
    for mask in attention.last_masks:
        assert np.all((mask > 0) & (mask < 1))


def test_mask_override_of_one_is_identity(rng):
    attention = ScnauUnit("att", 8, 8, (8, 16), rng_for(3, 0))
    attention.mask_override = 1.0
    x = rng.standard_normal((1, 8, 4, 4))
    np.testing.assert_array_equal(attention(Tensor(x)).data, x)


def test_identity_initialized_model_is_exact_identity(rng):
    model = CascadeModel(ModelArchitecture(width_scale=0.125, num_blocks=1))
    y = rng.uniform(0, 255, (12, 10))
    np.testing.assert_array_equal(restore_image(y, model), y)
    out = model_forward(y, model)
    assert np.all(out.gain_hat.data == 1.0)
    assert np.all(out.offset_hat.data == 0.0)


@pytest.mark.parametrize("shape", [(8, 8), (10, 14), (34, 18), (9, 7), (256, 256)])
def test_restore_keeps_any_extent(small_model, rng, shape):
    out = restore_image(rng.uniform(0, 255, shape), small_model)
    assert out.shape == shape
    assert np.all(np.isfinite(out))


def test_extent_below_two_is_rejected(small_model):
    with pytest.raises(ConfigurationError):
        restore_image(np.zeros((1, 8)), small_model)
    with pytest.raises(ConfigurationError):
        model_forward(np.zeros((1, 2, 4, 4)), small_model)


def test_batch_members_are_independent(small_model, rng):
    batch = rng.uniform(0, 255, (3, 1, 8, 8))
    together = model_forward(batch, small_model).x_hat.data
    for i in range(3):
        alone = model_forward(batch[i:i + 1], small_model).x_hat.data
        np.testing.assert_allclose(together[i], alone[0], rtol=1e-10, atol=1e-10)


def test_gradients_match_finite_differences(grad_check, rng):
    model = CascadeModel(ModelArchitecture(width_scale="1/8", num_blocks=1, identity_init=False, seed=5))
    y = rng.uniform(0.2, 1.0, (1, 1, 6, 6))
    params = model.named_parameters()
    leaves = [params[name] for name in (
        "gain.head.weight", "gain.feb0.cf.sp.weight", "gain.feb0.att.channel2.weight",
        "gain.feb0.att.spatial3.bias", "offset.feb0.cf.dia.weight", "offset.out.weight",
    )]
    assert grad_check(lambda _: model_forward(y, model).x_hat, leaves, samples=4) < 1e-4


def test_full_depth_mse_gradients_match_finite_differences(rng):
    model = CascadeModel(ModelArchitecture(width_scale="1/8", identity_init=False, seed=7))
    assert len(model.gain_subnet.blocks) == len(model.offset_subnet.blocks) == 5
    y = rng.uniform(0.2, 1.0, (1, 1, 8, 8))
    clean = 0.9 * y + 0.05

    def loss_value():
        return mse_loss(model_forward(y, model).x_hat, clean)

    backward(loss_value())
    params = model.parameters()
    picks = [(params[i], int(rng.integers(params[i].value.size)))
             for i in rng.choice(len(params), size=20, replace=False)]
    analytic, numeric = [], []
    eps = 1e-6
    for param, pos in picks:
        analytic.append(param.grad.reshape(-1)[pos])
        flat = param.value.reshape(-1)
        original = flat[pos]
        flat[pos] = original + eps
        plus = loss_value().item()
        flat[pos] = original - eps
        minus = loss_value().item()
        flat[pos] = original
        numeric.append((plus - minus) / (2 * eps))
    analytic, numeric = np.array(analytic), np.array(numeric)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    assert np.abs(analytic - numeric).max() / scale < 1e-4


def test_gradient_reaches_the_input(grad_check, rng):
    model = CascadeModel(ModelArchitecture(width_scale="1/8", num_blocks=1, identity_init=False, seed=6))
    leaves = [Tensor(rng.uniform(0.2, 1.0, (1, 1, 4, 6)), requires_grad=True)]
    assert grad_check(lambda t: model_forward(t[0], model).x_hat, leaves) < 1e-4


def test_width_rule():
    assert ModelArchitecture().features == 64
    assert ModelArchitecture(width_scale="1/4").features == 16
    assert ModelArchitecture(width_scale="1/8").features == 8
    assert ModelArchitecture(width_scale=0.01).scaled(512) == 8
    with pytest.raises(ValueError):
        ModelArchitecture(width_scale="a/b")
    with pytest.raises(ValueError):
        ModelArchitecture(width_scale=0)


@pytest.mark.parametrize("block,attention", [
    ("conv3", "scnau"), ("conv3_5", "spatial"), ("conv3_5_7", "channel"), ("cf_conv", "none"),
])
def test_ablation_variants_build_and_run(rng, block, attention):
    model = CascadeModel(ModelArchitecture(width_scale="1/8", num_blocks=1, block=block,
                                           attention=attention, identity_init=False))
    assert all(isinstance(p, Parameter) for p in model.parameters())
    assert len(model.named_parameters()) == len(model.parameters())
    assert restore_image(rng.uniform(0, 255, (8, 8)), model).shape == (8, 8)


def test_same_seed_same_weights():
    a = CascadeModel(ModelArchitecture(width_scale="1/8", num_blocks=1, seed=2))
    b = CascadeModel(ModelArchitecture(width_scale="1/8", num_blocks=1, seed=2))
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert pa.name == pb.name
        np.testing.assert_array_equal(pa.value, pb.value)


def test_float32_precision(rng):
    model = CascadeModel(ModelArchitecture(width_scale="1/8", num_blocks=1), precision="float32")
    assert model.precision == "float32"
    assert all(p.dtype == np.float32 for p in model.parameters())
    out = restore_image(rng.uniform(0, 255, (8, 8)), model)
    assert out.dtype == np.float64
