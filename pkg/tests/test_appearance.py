import numpy as np
import pytest

from sgshade import diffmath as dm
from sgshade.appearance import (
    ANGLE_MARGIN,
    AppearanceConfig,
    PositionalEncoding,
    init_style,
    load_style,
    normal_to_angles,
    positional_encode,
    predict_normal,
    predict_svbrdf,
    roughness_to_sharpness,
    save_style,
    svbrdf_features,
    svbrdf_heads,
    symmetry_prior,
)
from sgshade.geometry import make_icosphere

from conftest import central_difference, rel_err


def tiny_config(**kw):
    base = dict(hidden_width=16, svbrdf_pe_features=8, svbrdf_pe_sigma=2.0,
                normal_pe_features=8, normal_pe_sigma=1.0, num_lights=2)
    base.update(kw)
    return AppearanceConfig(**base)


class TestPositionalEncoding:
    def test_zero_input_gives_ones_then_zeros(self, rng):
        pe = PositionalEncoding.gaussian(3, 8, 4.0, rng)
        out = pe.encode(np.zeros((1, 3)))
        assert np.allclose(out[0, :8], 1.0)
        assert np.allclose(out[0, 8:], 0.0)

    def test_outputs_bounded(self, rng):
        pe = PositionalEncoding.gaussian(3, 16, 10.0, rng)
        out = pe.encode(rng.normal(size=(200, 3)))
        assert (np.abs(out) <= 1.0 + 1e-12).all()

    def test_ladder_mode_frozen_values(self):
        # scalar input 0.25, freqs 1 and 2: angles pi/2 and pi
        pe = PositionalEncoding.ladder(1, 2)
        out = pe.encode(np.array([[0.25]]))
        assert np.allclose(out[0], [0.0, -1.0, 1.0, 0.0], atol=1e-12)

    def test_identity_passthrough(self):
        pe = PositionalEncoding.identity()
        x = np.arange(6.0).reshape(2, 3)
        assert np.array_equal(pe.encode(x), x)

    def test_matrix_is_fixed_not_trained(self, rng):
        style = init_style(tiny_config(), rng)
        assert not any(k.startswith("pe") or ".pe" in k for k in style.params)


class TestSymmetryPrior:
    def test_negative_coordinate_mirrored(self):
        assert np.allclose(symmetry_prior([1.0, 2.0, -3.0], "z"), [1, 2, 3])

    def test_nonnegative_fixed_point(self):
        assert np.allclose(symmetry_prior([1.0, 2.0, 3.0], "z"), [1, 2, 3])

    def test_disabled_is_identity(self):
        assert np.allclose(symmetry_prior([1.0, 2.0, -3.0], None), [1, 2, -3])

    def test_svbrdf_is_exactly_mirror_symmetric(self, rng):
        style = init_style(tiny_config(symmetry_axis="z"), rng)
        pts = rng.normal(size=(20, 3))
        mirrored = pts * np.array([1.0, 1.0, -1.0])
        a = svbrdf_heads(svbrdf_features(style, pts), style.params, style.config)
        b = svbrdf_heads(svbrdf_features(style, mirrored), style.params,
                         style.config)
        for ca, cb in zip(a["diffuse"], b["diffuse"]):
            assert np.array_equal(dm.value_of(ca), dm.value_of(cb))


class TestPredictNormal:
    def test_zero_initialized_net_reproduces_face_normals(self, rng):
        style = init_style(tiny_config(), rng)
        mesh = make_icosphere(1)
        for n in mesh.face_normals[:20]:
            x = n * 0.9
            got = predict_normal(style, x, n)
            assert np.allclose(got, n, atol=1e-12)

    def test_offsets_bounded_by_quarter_pi(self, rng):
        style = init_style(tiny_config(), rng)
        # overwrite the zero final layer so offsets are non-trivial
        style.params["normal.2.W"] = rng.normal(size=style.params["normal.2.W"].shape) * 10
        from sgshade.appearance import normal_features, normal_offsets
        pts = rng.normal(size=(500, 3))
        nrm = pts / np.linalg.norm(pts, axis=1, keepdims=True)
        theta, phi = normal_to_angles(nrm)
        feats = normal_features(style, pts, theta, phi)
        d_theta, d_phi = normal_offsets(feats, style.params)
        # tanh saturates to exactly 1.0 in float64, hence <= not <
        assert (np.abs(dm.value_of(d_theta)) <= np.pi / 4).all()
        assert (np.abs(dm.value_of(d_phi)) <= np.pi / 4).all()

    def test_polar_angle_clamp_engages(self, rng):
        style = init_style(tiny_config(), rng)
        n = np.array([1e-6, 1.0, 0.0])
        n = n / np.linalg.norm(n)
        theta, phi = normal_to_angles(n[None])
        assert phi[0] >= ANGLE_MARGIN

    def test_disabled_net_returns_input_normal(self, rng):
        style = init_style(tiny_config(use_normal_net=False), rng)
        n = np.array([0.0, 0.0, 1.0])
        assert np.array_equal(predict_normal(style, [0.1, 0.2, 0.3], n), n)


class TestPredictSvbrdf:
    def test_outputs_in_unit_interval(self, rng):
        style = init_style(tiny_config(), rng)
        for _ in range(50):
            out = predict_svbrdf(style, rng.normal(size=3))
            assert ((out["diffuse_albedo"] > 0) & (out["diffuse_albedo"] < 1)).all()
            assert ((out["specular_amp"] > 0) & (out["specular_amp"] < 1)).all()
            assert 0.01 <= out["roughness"] <= 1.0

    def test_diffuse_brdf_is_albedo_over_pi(self, rng):
        style = init_style(tiny_config(), rng)
        out = predict_svbrdf(style, [0.3, -0.2, 0.5])
        assert np.allclose(out["diffuse_brdf"], out["diffuse_albedo"] / np.pi)

    def test_deterministic(self, rng):
        style = init_style(tiny_config(), rng)
        x = [0.4, 0.1, -0.7]
        a = predict_svbrdf(style, x)
        b = predict_svbrdf(style, x)
        assert np.array_equal(a["diffuse_albedo"], b["diffuse_albedo"])

    def test_bulk_outputs_finite_and_in_range(self, rng):
        # wide sweep at reduced width to keep the matmuls cheap
        style = init_style(tiny_config(), rng)
        pts = rng.uniform(-1.5, 1.5, size=(1_000_000, 3))
        heads = svbrdf_heads(svbrdf_features(style, pts), style.params,
                             style.config)
        for ch in heads["diffuse"] + heads["specular"]:
            v = dm.value_of(ch)
            assert np.isfinite(v).all()
            assert ((v > 0) & (v < 1)).all()
        r = dm.value_of(heads["roughness"])
        assert ((r >= 0.01) & (r <= 1.0)).all()

    def test_diffuse_gradient_matches_finite_differences(self, rng):
        style = init_style(tiny_config(), rng)
        pts = rng.normal(size=(4, 3))
        feats = svbrdf_features(style, pts)
        name = "svbrdf.diffuse.1.W"

        tape = dm.Tape()
        params = {k: (tape.lift(v, trainable=True) if k == name else v)
                  for k, v in style.params.items()}
        heads = svbrdf_heads(feats, params, style.config)
        out = dm.vsum(heads["diffuse"][0])
        (analytic,) = dm.backward(tape, out)

        def scalar(w):
            p = dict(style.params)
            p[name] = w
            h = svbrdf_heads(feats, p, style.config)
            return float(np.sum(dm.value_of(h["diffuse"][0])))

        fd = central_difference(scalar, style.params[name])
        assert rel_err(analytic, fd).max() < 1e-3


class TestRoughnessMapping:
    def test_endpoints(self):
        assert np.isclose(roughness_to_sharpness(1.0), 2.0)
        assert np.isclose(roughness_to_sharpness(0.01), 20000.0)

    def test_strictly_decreasing(self):
        r = np.linspace(0.01, 1.0, 100)
        lam = roughness_to_sharpness(r)
        assert (np.diff(lam) < 0).all()


class TestCheckpoint:
    def test_round_trip_bit_exact(self, rng, tmp_path):
        style = init_style(tiny_config(symmetry_axis="z"), rng)
        path = tmp_path / "style.ckpt"
        save_style(style, path)
        loaded = load_style(path)
        assert loaded.config == style.config
        assert list(loaded.params) == list(style.params)
        for k in style.params:
            assert np.array_equal(loaded.params[k], style.params[k])
        assert np.array_equal(loaded.pe_svbrdf.matrix, style.pe_svbrdf.matrix)
        assert np.array_equal(loaded.pe_normal.matrix, style.pe_normal.matrix)

    def test_identity_pe_round_trips(self, rng, tmp_path):
        style = init_style(tiny_config(use_svbrdf_pe=False,
                                       use_normal_pe=False), rng)
        path = tmp_path / "style.ckpt"
        save_style(style, path)
        loaded = load_style(path)
        assert loaded.pe_svbrdf.matrix is None
        assert loaded.pe_normal.matrix is None

    def test_saved_bytes_are_deterministic(self, rng, tmp_path):
        style = init_style(tiny_config(), rng)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_style(style, p1)
        save_style(style, p2)
        assert p1.read_bytes() == p2.read_bytes()
