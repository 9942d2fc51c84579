import numpy as np
import pytest

from app.data.textures import moving_scene, texture
from app.errors import ConfigurationError, MethodConfigError
from app.services.classical import (
    CalibrationField,
    SbSolverConfig,
    SceneBasedCorrector,
    correct,
    exact_calibration,
    fa_fpnr_update,
    fa_learning_rate,
    nn_fpnr_update,
    nn_gradient,
    nn_objective,
    target_image,
    tv_fpnr_update,
    tv_gradient,
    tv_objective,
    two_point_calibrate,
)
from app.services.metrics import psnr, roughness
from app.services.noise import NoiseSpec, apply_fpn, gen_sequence, make_noise, random_walk_path


@pytest.fixture
def noisy_field(rng):
    return CalibrationField(gain_hat=rng.uniform(0.9, 1.1, (5, 6)), offset_hat=rng.uniform(-5, 5, (5, 6)))


def test_identity_field_leaves_frame_unchanged(rng):
    frame = rng.uniform(0, 255, (7, 7))
    np.testing.assert_array_equal(correct(frame, CalibrationField.identity(7, 7)), frame)


def test_exact_inverse_recovers_clean_frame(rng):
    clean = rng.uniform(0, 255, (16, 16))
    noise = make_noise(NoiseSpec(sigma_g=0.1, sigma_o=15, gain_geometry="per_pixel", seed=2), 16, 16)
    np.testing.assert_allclose(correct(apply_fpn(clean, noise), exact_calibration(noise)), clean, atol=1e-10)


def test_correct_is_linear_without_offset(rng):
    frame = rng.uniform(0, 255, (4, 4))
    cal = CalibrationField(gain_hat=rng.uniform(0.5, 1.5, (4, 4)), offset_hat=np.zeros((4, 4)))
    np.testing.assert_allclose(correct(3.5 * frame, cal), 3.5 * correct(frame, cal))


def test_correct_rejects_mismatched_shape():
    with pytest.raises(ConfigurationError):
        correct(np.zeros((3, 3)), CalibrationField.identity(4, 4))


def test_two_point_on_uniform_array_is_identity():
    cal = two_point_calibrate([np.full((3, 3), 40.0)], [np.full((3, 3), 180.0)])
    np.testing.assert_allclose(cal.gain_hat, 1.0)
    np.testing.assert_allclose(cal.offset_hat, 0.0, atol=1e-12)


def test_two_point_two_detector_hand_case():
    # detector A: g=2, o=3; detector B: g=1, o=0; radiances 50 and 150
    low = np.array([[2 * 50 + 3, 50.0]])
    high = np.array([[2 * 150 + 3, 150.0]])
    cal = two_point_calibrate([low], [high])
    np.testing.assert_allclose(cal.gain_hat, [[0.75, 1.5]])
    np.testing.assert_allclose(cal.offset_hat, [[-0.75, 1.5]])
    np.testing.assert_allclose(correct(low, cal), [[76.5, 76.5]])
    np.testing.assert_allclose(correct(high, cal), [[226.5, 226.5]])


def test_two_point_flattens_references_and_inverts_frames(rng):
    noise = make_noise(NoiseSpec(sigma_g=0.1, sigma_o=12, gain_geometry="per_pixel", seed=8), 12, 10)
    low = [apply_fpn(np.full((12, 10), 30.0), noise) for _ in range(3)]
    high = [apply_fpn(np.full((12, 10), 200.0), noise) for _ in range(2)]
    cal = two_point_calibrate(low, high)
    for frames in (low, high):
        flat = correct(frames[0], cal)
        assert flat.max() - flat.min() <= 1e-9 * flat.mean()
    # a third frame is restored up to the affine map fixed by the reference means
    clean = rng.uniform(0, 255, (12, 10))
    restored = correct(apply_fpn(clean, noise), cal)
    g_mean, o_mean = noise.gain.mean(), noise.offset.mean()
    np.testing.assert_allclose(restored, g_mean * clean + o_mean, atol=1e-9)


def test_two_point_reports_dead_pixels():
    low = np.array([[10.0, 20.0], [30.0, 40.0]])
    high = np.array([[110.0, 20.0], [130.0, 140.0]])
    cal = two_point_calibrate([low], [high])
    assert cal.dead_pixels == ((0, 1),)
    assert cal.gain_hat[0, 1] == 1.0
    assert cal.offset_hat[0, 1] == pytest.approx(low.mean() - 20.0)


def test_two_point_needs_frames():
    with pytest.raises(ConfigurationError):
        two_point_calibrate([], [np.zeros((2, 2))])


# nn


def test_nn_update_is_a_no_op_on_constant_frame():
    cal = CalibrationField.identity(6, 6)
    out = nn_fpnr_update(np.full((6, 6), 77.0), cal, SbSolverConfig.for_method("nn"))
    np.testing.assert_allclose(out.gain_hat, cal.gain_hat, rtol=0, atol=1e-14)
    np.testing.assert_allclose(out.offset_hat, cal.offset_hat, rtol=0, atol=1e-10)


def test_nn_gradient_matches_finite_differences(rng, noisy_field):
    cfg = SbSolverConfig.for_method("nn")
    frame = rng.uniform(50, 200, (5, 6))
    x_hat = (noisy_field.gain_hat * frame + noisy_field.offset_hat) / cfg.data_scale
    target = target_image(x_hat)
    grad_gain, grad_offset = nn_gradient(frame, noisy_field, cfg, target=target)

    def objective(gain, offset):
        return nn_objective(frame, CalibrationField(gain, offset), cfg, target=target)

    for grad, which, eps in ((grad_gain, "gain", 1e-6), (grad_offset, "offset", 1e-3)):
        numeric = np.zeros_like(grad)
        for idx in np.ndindex(grad.shape):
            plus_g, plus_o = noisy_field.gain_hat.copy(), noisy_field.offset_hat.copy()
            minus_g, minus_o = noisy_field.gain_hat.copy(), noisy_field.offset_hat.copy()
            if which == "gain":
                plus_g[idx] += eps
                minus_g[idx] -= eps
            else:
                plus_o[idx] += eps
                minus_o[idx] -= eps
            numeric[idx] = (objective(plus_g, plus_o) - objective(minus_g, minus_o)) / (2 * eps)
        assert np.abs(grad - numeric).max() <= 1e-6 * np.abs(numeric).max()


def test_nn_step_descends_the_objective(rng):
    cfg = SbSolverConfig.for_method("nn", mu0=1e-3)
    frame = texture(24, 24, seed=1)
    cal = CalibrationField(gain_hat=rng.uniform(0.95, 1.05, (24, 24)), offset_hat=rng.uniform(-8, 8, (24, 24)))
    before = nn_objective(frame, cal, cfg)
    after = nn_objective(frame, nn_fpnr_update(frame, cal, cfg), cfg)
    assert after <= before + 1e-12


def test_nn_update_is_pure(rng, noisy_field):
    frame = rng.uniform(0, 255, (5, 6))
    gain, offset = noisy_field.gain_hat.copy(), noisy_field.offset_hat.copy()
    cfg = SbSolverConfig.for_method("nn")
    a = nn_fpnr_update(frame, noisy_field, cfg)
    b = nn_fpnr_update(frame, noisy_field, cfg)
    np.testing.assert_array_equal(noisy_field.gain_hat, gain)
    np.testing.assert_array_equal(noisy_field.offset_hat, offset)
    np.testing.assert_array_equal(a.gain_hat, b.gain_hat)
    np.testing.assert_array_equal(a.offset_hat, b.offset_hat)


def test_nn_rejects_regularization():
    with pytest.raises(MethodConfigError):
        nn_fpnr_update(np.zeros((3, 3)), CalibrationField.identity(3, 3),
                       SbSolverConfig(alpha=1.0, **{"lambda": 0.5}))


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SbSolverConfig(alpha=0.0, **{"lambda": 0.0})
    with pytest.raises(ValueError):
        SbSolverConfig(p=3)
    with pytest.raises(ValueError):
        SbSolverConfig(unknown=1)
    assert SbSolverConfig.for_method("tv").lam == 1.0


# fa


def test_fa_with_zero_variance_gain_equals_nn(rng, noisy_field):
    frame = rng.uniform(0, 255, (5, 6))
    nn = nn_fpnr_update(frame, noisy_field, SbSolverConfig.for_method("nn"))
    fa = fa_fpnr_update(frame, noisy_field, SbSolverConfig.for_method("fa", fa_variance_gain=0.0))
    np.testing.assert_allclose(fa.gain_hat, nn.gain_hat, rtol=0, atol=1e-15)
    np.testing.assert_allclose(fa.offset_hat, nn.offset_hat, rtol=0, atol=1e-12)


def test_fa_on_constant_frame_equals_nn():
    cal = CalibrationField.identity(6, 6)
    frame = np.full((6, 6), 120.0)
    nn = nn_fpnr_update(frame, cal, SbSolverConfig.for_method("nn"))
    fa = fa_fpnr_update(frame, cal, SbSolverConfig.for_method("fa"))
    np.testing.assert_allclose(fa.gain_hat, nn.gain_hat, rtol=1e-12)
    np.testing.assert_allclose(fa.offset_hat, nn.offset_hat, atol=1e-10)


def test_fa_slows_down_on_detail():
    frame = (np.indices((8, 8)).sum(axis=0) % 2) * 100.0
    cfg = SbSolverConfig.for_method("fa")
    rates = fa_learning_rate(frame, CalibrationField.identity(8, 8), cfg)
    assert np.all(rates < cfg.mu0)


# tv


def test_tv_update_is_a_no_op_on_constant_image():
    cal = CalibrationField.identity(5, 5)
    out = tv_fpnr_update(np.full((5, 5), 60.0), cal, SbSolverConfig.for_method("tv"))
    np.testing.assert_array_equal(out.gain_hat, cal.gain_hat)
    np.testing.assert_array_equal(out.offset_hat, cal.offset_hat)


def test_tv_gradient_matches_finite_differences(rng):
    cfg = SbSolverConfig.for_method("tv")
    frame = rng.uniform(20, 230, (4, 4))
    cal = CalibrationField(gain_hat=rng.uniform(0.9, 1.1, (4, 4)), offset_hat=rng.uniform(-5, 5, (4, 4)))
    grad_gain, grad_offset = tv_gradient(frame, cal, cfg)
    for grad, eps, is_gain in ((grad_gain, 1e-7, True), (grad_offset, 1e-5, False)):
        numeric = np.zeros_like(grad)
        for idx in np.ndindex(grad.shape):
            fields = []
            for sign in (1, -1):
                gain, offset = cal.gain_hat.copy(), cal.offset_hat.copy()
                (gain if is_gain else offset)[idx] += sign * eps
                fields.append(tv_objective(frame, CalibrationField(gain, offset), cfg))
            numeric[idx] = (fields[0] - fields[1]) / (2 * eps)
        assert np.abs(grad - numeric).max() <= 1e-5 * np.abs(numeric).max()


def test_tv_requires_its_specialization():
    frame, cal = np.zeros((3, 3)), CalibrationField.identity(3, 3)
    with pytest.raises(MethodConfigError):
        tv_fpnr_update(frame, cal, SbSolverConfig.for_method("nn"))
    with pytest.raises(MethodConfigError):
        tv_fpnr_update(frame, cal, SbSolverConfig.for_method("tv", p=2))


def test_tv_reduces_roughness_of_stripe_corruption():
    clean = texture(48, 48, seed=5, contrast=20.0)
    noise = make_noise(NoiseSpec(sigma_g=0.1, sigma_o=0.0, seed=3), 48, 48)
    frame = apply_fpn(clean, noise)
    cfg = SbSolverConfig.for_method("tv")
    cal = CalibrationField.identity(48, 48)
    for _ in range(300):
        cal = tv_fpnr_update(frame, cal, cfg)
    assert roughness(correct(frame, cal)) < roughness(frame)


# sequences


def test_corrector_carries_state_and_starts_from_identity(rng):
    frames = [rng.uniform(0, 255, (6, 6)) for _ in range(3)]
    corrector = SceneBasedCorrector("nn")
    out = corrector.run(frames)
    np.testing.assert_array_equal(out[0], frames[0])
    assert corrector.frames_seen == 3
    assert not np.array_equal(corrector.field.gain_hat, np.ones((6, 6)))


def test_corrector_rejects_mismatched_config():
    with pytest.raises(MethodConfigError):
        SceneBasedCorrector("tv", SbSolverConfig.for_method("nn"))


def _moving_sequence(frames, sigma_g=0.08, sigma_o=10.0):
    base = moving_scene(88, 88, seed=0)
    noise = make_noise(NoiseSpec(sigma_g=sigma_g, sigma_o=sigma_o, seed=1), 64, 64)
    return gen_sequence(base, frames, random_walk_path(frames, (24, 24), seed=0), noise)


@pytest.mark.slow
def test_nn_converges_on_moving_scene():
    sequence = _moving_sequence(200)
    restored = SceneBasedCorrector("nn").run([corrupted for _, corrupted in sequence])
    curve = np.array([psnr(clean, x) for (clean, _), x in zip(sequence, restored)])
    baseline = psnr(sequence[-1][0], sequence[-1][1])
    assert curve[-1] >= baseline + 4.0
    windows = curve.reshape(4, 50).mean(axis=1)
    assert np.all(np.diff(windows) >= -1e-6)
    assert windows[-1] >= windows[0] + 3.0


@pytest.mark.slow
def test_tv_sequence_reduces_roughness():
    sequence = _moving_sequence(200)
    restored = SceneBasedCorrector("tv").run([corrupted for _, corrupted in sequence])
    assert roughness(restored[-1]) < roughness(sequence[-1][1])
