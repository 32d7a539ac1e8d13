import numpy as np
import pytest

from sgshade import diffmath as dm
from sgshade.appearance import AppearanceConfig, init_style
from sgshade.geometry import Camera, make_icosphere, normalize_mesh
from sgshade.lighting import EnvironmentMap, softplus
from sgshade.optimization import (
    AdamWState,
    ImageTargetObjective,
    NumericError,
    ProtocolMismatchError,
    RemoteEmbeddingLoss,
    RemoteServiceError,
    TextPromptObjective,
    TrainConfig,
    adamw_step,
    bilinear_resize,
    cosine_loss,
    crop_augment,
    image_target_loss,
    learning_rate_at,
    train,
    write_log_csv,
)
from sgshade import renderer

from conftest import central_difference, rel_err
from stub_service import run_echo_stub


def tiny_config(**kw):
    base = dict(hidden_width=12, svbrdf_pe_features=6, svbrdf_pe_sigma=2.0,
                normal_pe_features=6, normal_pe_sigma=1.0, num_lights=2)
    base.update(kw)
    return AppearanceConfig(**base)


class TestAdamW:
    def test_zero_gradient_zero_decay_is_identity(self):
        p = np.array([1.0, -2.0])
        state = AdamWState.zeros_like(p)
        out = adamw_step(p, np.zeros(2), state, lr=1e-3, weight_decay=0.0)
        assert np.array_equal(out, p)

    def test_first_step_hand_value(self):
        # g=1, t=1: m_hat=1, v_hat=1 -> step = -lr / (1 + eps)
        p = np.array([0.0])
        state = AdamWState.zeros_like(p)
        out = adamw_step(p, np.ones(1), state, lr=5e-4, weight_decay=0.0)
        assert np.isclose(out[0], -5e-4 / (1.0 + 1e-8), rtol=1e-12)

    def test_non_finite_gradient_aborts(self):
        p = np.zeros(2)
        with pytest.raises(NumericError):
            adamw_step(p, np.array([1.0, np.nan]), AdamWState.zeros_like(p),
                       lr=1e-3)

    def test_light_constraints_survive_100_random_steps(self, rng):
        style = init_style(tiny_config(), rng)
        states = {k: AdamWState.zeros_like(v) for k, v in style.params.items()}
        for _ in range(100):
            for name in ("light.axis_raw", "light.sharpness_raw",
                         "light.amplitude_raw"):
                g = rng.normal(size=style.params[name].shape)
                style.params[name] = adamw_step(style.params[name], g,
                                                states[name], lr=0.05)
            axes = style.params["light.axis_raw"]
            style.params["light.axis_raw"] = axes / np.linalg.norm(
                axes, axis=1, keepdims=True)
            for lobe in style.env.lobes:
                assert lobe.sharpness > 0
                assert (lobe.amplitude >= 0).all()
                assert np.isclose(np.linalg.norm(lobe.lobe_axis), 1.0)


class TestSchedule:
    def test_exact_decay_staircase(self):
        for t in (0, 1, 499, 500, 999, 1000, 1499):
            expected = 5e-4 * 0.7 ** (t // 500)
            assert learning_rate_at(t) == expected


class TestCosineLoss:
    def test_parallel(self, rng):
        a = rng.normal(size=512)
        assert np.isclose(cosine_loss(a, 2.0 * a), -1.0)

    def test_orthogonal(self):
        a, b = np.zeros(4), np.zeros(4)
        a[0] = 3.0
        b[1] = 2.0
        assert np.isclose(cosine_loss(a, b), 0.0)

    def test_antiparallel(self, rng):
        a = rng.normal(size=512)
        assert np.isclose(cosine_loss(a, -a), 1.0)

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError):
            cosine_loss(np.zeros(4), np.ones(4))


class TestImageTargetLoss:
    def test_identical_images(self, rng):
        x = rng.uniform(size=(2, 8, 8, 3))
        loss, grad = image_target_loss(x, x)
        assert loss == 0.0
        assert (grad == 0.0).all()

    def test_single_pixel_difference(self):
        x = np.zeros((1, 4, 4, 3))
        t = x.copy()
        x[0, 1, 2, 0] = 0.25
        loss, _ = image_target_loss(x, t)
        assert np.isclose(loss, 0.25**2 / x.size)

    def test_gradient_matches_finite_differences(self, rng):
        x = rng.uniform(size=(1, 3, 3, 3))
        t = rng.uniform(size=(1, 3, 3, 3))
        _, grad = image_target_loss(x, t)
        fd = central_difference(lambda v: image_target_loss(v, t)[0], x)
        assert rel_err(grad, fd).max() < 1e-4

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            image_target_loss(np.zeros((1, 4, 4, 3)), np.zeros((1, 5, 4, 3)))


class TestCrops:
    def test_full_scale_crops_are_resized_copies(self, rng):
        img = rng.uniform(size=(64, 64, 3))
        crops = crop_augment(img, 3, (1.0, 1.0), rng, out_size=32)
        resized = bilinear_resize(img, 32)
        assert crops.shape == (3, 32, 32, 3)
        for i in range(3):
            assert np.allclose(crops[i], resized, atol=1e-12)

    def test_output_shape_default_224(self, rng):
        img = rng.uniform(size=(224, 224, 3))
        crops = crop_augment(img, 2, (0.5, 0.99), rng)
        assert crops.shape == (2, 224, 224, 3)

    def test_too_small_image_rejected(self, rng):
        with pytest.raises(ValueError):
            crop_augment(np.zeros((64, 64, 3)), 1, (0.5, 0.9), rng)

    def test_bilinear_gradient_matches_finite_differences(self, rng):
        img = rng.uniform(size=(8, 8, 3))
        weights = rng.normal(size=(224, 224, 3))

        tape = dm.Tape()
        src = tape.lift(img, trainable=True)
        out = bilinear_resize(src, 224)
        (analytic,) = dm.backward(tape, out, seed=weights)

        def scalar(x):
            return float(np.sum(bilinear_resize(x, 224) * weights))

        fd = central_difference(scalar, img, h=1e-6)
        assert rel_err(analytic, fd).max() < 1e-4


class TestRemoteEchoProtocol:
    def test_round_trip_is_bit_exact(self, rng):
        images = rng.uniform(size=(3, 16, 16, 3))
        with run_echo_stub() as endpoint:
            client = RemoteEmbeddingLoss.echo(endpoint)
            loss, grads = client(images)
        # expected values exactly as the service computes them
        pix32 = images.astype("<f4")
        expected_loss = np.float32(np.float64(pix32.ravel()).mean())
        expected_grad = np.float64(np.float32(1.0 / pix32.size))
        assert np.float32(loss) == expected_loss
        assert grads.shape == images.shape
        assert (grads == expected_grad).all()

    def test_gradient_shape_contract(self, rng):
        images = rng.uniform(size=(5, 8, 8, 3))
        with run_echo_stub() as endpoint:
            _, grads = RemoteEmbeddingLoss.echo(endpoint)(images)
        assert grads.shape == (5, 8, 8, 3)

    def test_finite_difference_probe_on_five_pixels(self, rng):
        # two extra forward calls per probe; echo loss is the pixel mean
        images = rng.uniform(0.2, 0.8, size=(1, 8, 8, 3))
        h = 1e-3
        with run_echo_stub() as endpoint:
            client = RemoteEmbeddingLoss.echo(endpoint)
            _, grads = client(images)
            flat = images.reshape(-1)
            picks = rng.choice(flat.size, size=5, replace=False)
            for i in picks:
                up, down = images.copy(), images.copy()
                up.reshape(-1)[i] += h
                down.reshape(-1)[i] -= h
                fd = (client(up)[0] - client(down)[0]) / (2 * h)
                assert rel_err(grads.reshape(-1)[i], fd, floor=1e-9).max() < 1e-2

    def test_retry_recovers_from_transient_failure(self, rng):
        images = rng.uniform(size=(1, 8, 8, 3))
        with run_echo_stub(fail_next_requests=1) as endpoint:
            loss, _ = RemoteEmbeddingLoss.echo(endpoint, retry_wait=0.05)(images)
        assert np.isfinite(loss)

    def test_unreachable_service_raises(self, rng):
        client = RemoteEmbeddingLoss.echo("http://127.0.0.1:9", retries=1,
                                          retry_wait=0.01)
        with pytest.raises(RemoteServiceError):
            client(np.zeros((1, 8, 8, 3)))

    def test_version_mismatch_raises(self, rng):
        images = rng.uniform(size=(1, 8, 8, 3))
        with run_echo_stub(respond_with_version=99) as endpoint:
            with pytest.raises(ProtocolMismatchError):
                RemoteEmbeddingLoss.echo(endpoint)(images)


def make_recovery_scene(seed=0, size=16, n_views=3):
    """Tiny synthetic inverse-rendering setup shared by training tests."""
    rng = np.random.default_rng(seed)
    mesh = normalize_mesh(make_icosphere(1))
    truth = init_style(tiny_config(use_specular=False, use_normal_net=False,
                                   num_lights=2), rng)
    cams = [Camera(position=p, height=size, width=size)
            for p in ([0, 0, 2.0], [1.6, 0.4, 1.1], [-1.2, 0.8, 1.3])][:n_views]
    targets = [renderer.render_view(c, mesh, truth, background="white").image
               for c in cams]
    objective = ImageTargetObjective(cameras=cams, images=targets,
                                     background="white")
    return mesh, objective


class TestTrain:
    def test_zero_iterations_returns_initial_state(self):
        mesh, objective = make_recovery_scene()
        cfg = TrainConfig(iterations=0, seed=5)
        rng = np.random.default_rng(5)
        style0 = init_style(tiny_config(use_specular=False,
                                        use_normal_net=False, num_lights=2), rng)
        before = {k: v.copy() for k, v in style0.params.items()}
        result = train(mesh, objective, cfg, style=style0)
        assert result.log == []
        for k in before:
            assert np.array_equal(result.style.params[k], before[k])

    def test_loss_decreases_on_image_targets(self):
        mesh, objective = make_recovery_scene()
        cfg = TrainConfig(iterations=40, learning_rate=2e-2, weight_decay=0.0,
                          seed=3)
        result = train(mesh, objective, cfg,
                       appearance=tiny_config(use_specular=False,
                                              use_normal_net=False,
                                              num_lights=2))
        losses = [row[1] for row in result.log]
        assert losses[-1] < 0.5 * losses[0]

    def test_fixed_seed_reproduces_loss_curve(self):
        mesh, objective = make_recovery_scene()
        cfg = TrainConfig(iterations=6, seed=11)
        appearance = tiny_config(use_specular=False, use_normal_net=False,
                                 num_lights=2)
        a = train(mesh, objective, cfg, appearance=appearance)
        b = train(mesh, objective, cfg, appearance=appearance)
        assert [r[1] for r in a.log] == [r[1] for r in b.log]

    def test_non_finite_loss_aborts_with_iteration(self, monkeypatch):
        mesh, objective = make_recovery_scene()

        class PoisonLoss:
            def __init__(self, targets):
                self.shape = None

            def __call__(self, images):
                return float("nan"), np.zeros_like(images)

        from sgshade import optimization
        monkeypatch.setattr(optimization, "ImageTargetLoss", PoisonLoss)
        with pytest.raises(NumericError, match="iteration 0"):
            train(mesh, objective, TrainConfig(iterations=3, seed=0),
                  appearance=tiny_config(use_specular=False,
                                         use_normal_net=False, num_lights=2))

    def test_remote_mode_against_echo_stub(self):
        mesh, _ = make_recovery_scene()
        cfg = TrainConfig(iterations=2, views_per_iter=1, crops_per_view=2,
                          image_height=128, image_width=128,
                          crop_scale=(0.5, 0.9), seed=2)
        with run_echo_stub() as endpoint:
            objective = TextPromptObjective(prompt="a matte clay sphere",
                                            endpoint=endpoint,
                                            route="/v1/echo")
            result = train(mesh, objective, cfg,
                           appearance=tiny_config(num_lights=2))
        assert len(result.log) == 2
        assert all(np.isfinite(row[1]) for row in result.log)

    def test_log_csv_format(self, tmp_path):
        rows = [(0, 0.5, 5e-4, 0.01), (1, 0.4, 5e-4, 0.02)]
        path = tmp_path / "log.csv"
        write_log_csv(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "iter,loss,lr,seconds"
        assert lines[1].startswith("0,0.5,")


class TestPixelGradientChain:
    def test_end_to_end_through_crop_and_tonemap(self, rng):
        # loss -> crop -> tonemap -> shade -> parameters on an 8x8 render
        mesh = normalize_mesh(make_icosphere(0))
        style = init_style(tiny_config(num_lights=2), np.random.default_rng(1))
        cam = Camera(position=[0.3, 0.4, 2.0], height=8, width=8)
        view = renderer.sample_view(mesh, cam)
        target = rng.uniform(0.2, 0.8, size=(2, 8, 8, 3))

        def forward(params):
            lobes = renderer.light_lobe_values(params["light.axis_raw"],
                                               params["light.sharpness_raw"],
                                               params["light.amplitude_raw"])
            image, _ = renderer.shade_view(view, style, params, lobes,
                                           background="white")
            crop_rng = np.random.default_rng(77)
            return crop_augment(image, 2, (0.8, 1.0), crop_rng, out_size=8)

        tape = dm.Tape()
        lifted = {k: tape.lift(v, trainable=True)
                  for k, v in style.params.items()}
        crops = forward(lifted)
        loss, pixel_grads = image_target_loss(crops.value, target)
        grads = dm.backward(tape, crops, seed=pixel_grads)

        def scalar():
            return image_target_loss(dm.value_of(forward(style.params)),
                                     target)[0]

        h = 1e-5
        pick_rng = np.random.default_rng(9)
        for name, g in zip(style.params, grads):
            flat = style.params[name].reshape(-1)
            for i in pick_rng.choice(flat.size, size=min(3, flat.size),
                                     replace=False):
                orig = flat[i]
                flat[i] = orig + h
                up = scalar()
                flat[i] = orig - h
                down = scalar()
                flat[i] = orig
                fd = (up - down) / (2 * h)
                assert rel_err(g.reshape(-1)[i], fd).max() < 1e-3, name
