"""Consistency function: scaling pair, network contracts, checkpoints."""

import numpy as np
import pytest
import torch

from bridgecm.model import (
    CheckpointError,
    ConsistencyModel,
    ModelConfig,
    count_parameters,
    init_model,
    load_checkpoint,
    save_checkpoint,
    scaling,
    shape_manifest,
)

TINY = ModelConfig(base_width=4, time_embed_dim=8)
EPS = 1e-3
T_MAX = 0.999

# hand-evaluated at t = 0.999, sigma_data = 0.5, t_min = 0.001
C_SKIP_AT_T = 0.20064141046096160
C_OUT_AT_T = 0.44667647372521154


def rand_io(rng, batch=2, f=9, frames=8, dtype=torch.float32):
    x = torch.from_numpy(rng.standard_normal((batch, 2, f, frames))).to(dtype)
    y = torch.from_numpy(rng.standard_normal((batch, 2, f, frames))).to(dtype)
    return x, y


class TestScaling:
    def test_boundary_is_exact(self):
        c_skip, c_out = scaling(EPS, 0.5, EPS)
        assert c_skip == 1.0
        assert c_out == 0.0

    def test_terminal_values(self):
        c_skip, c_out = scaling(T_MAX, 0.5, EPS)
        assert c_skip == pytest.approx(C_SKIP_AT_T, abs=1e-15)
        assert c_out == pytest.approx(C_OUT_AT_T, abs=1e-15)

    def test_dense_sweep_bounds(self):
        t = np.linspace(EPS, T_MAX, 5000)
        c_skip, c_out = scaling(t, 0.5, EPS)
        assert np.all(np.isfinite(c_skip)) and np.all(np.isfinite(c_out))
        assert np.all((c_skip > 0) & (c_skip <= 1))
        assert np.all((c_out >= 0) & (c_out < 1))

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            scaling(EPS / 2, 0.5, EPS)
        with pytest.raises(ValueError):
            scaling(1.0, 0.5, EPS)

    def test_torch_tensor_input(self):
        t = torch.tensor([EPS, 0.5, T_MAX], dtype=torch.float64)
        c_skip, c_out = scaling(t, 0.5, EPS)
        assert c_skip[0] == 1.0 and c_out[0] == 0.0
        assert float(c_skip[2]) == pytest.approx(C_SKIP_AT_T, abs=1e-15)


class TestForward:
    def test_output_shape_matches_input(self):
        model = init_model(TINY, seed=0)
        rng = np.random.default_rng(0)
        for f, frames in ((9, 8), (129, 30), (16, 64)):
            x, y = rand_io(rng, batch=2, f=f, frames=frames)
            out = model(x, y, 0.5)
            assert out.shape == x.shape

    def test_unbatched_call(self):
        model = init_model(TINY, seed=0)
        rng = np.random.default_rng(1)
        x, y = rand_io(rng, batch=1)
        out = model(x[0], y[0], 0.5)
        assert out.shape == x[0].shape

    def test_deterministic_bitwise(self):
        model = init_model(TINY, seed=0)
        rng = np.random.default_rng(2)
        x, y = rand_io(rng)
        a = model(x, y, 0.7)
        b = model(x, y, 0.7)
        assert torch.equal(a, b)

    def test_boundary_identity_exact(self):
        rng = np.random.default_rng(3)
        for seed in range(10):
            model = init_model(TINY, seed=seed)
            x, y = rand_io(rng)
            out = model(x, y, EPS)
            assert torch.equal(out, x)

    def test_boundary_identity_after_weight_change(self):
        model = init_model(TINY, seed=0)
        with torch.no_grad():
            for p in model.parameters():
                p.add_(torch.ones_like(p))
        rng = np.random.default_rng(4)
        x, y = rand_io(rng)
        assert torch.equal(model(x, y, EPS), x)

    def test_zero_head_gives_pure_skip_path(self):
        model = init_model(TINY, seed=0)
        rng = np.random.default_rng(5)
        x, y = rand_io(rng)
        t = 0.6
        c_skip, _ = scaling(torch.full((2,), t), TINY.sigma_data, TINY.t_min)
        out = model(x, y, t)
        assert torch.equal(out, c_skip[:, None, None, None] * x)

    def test_network_call_counter(self):
        model = init_model(TINY, seed=0)
        rng = np.random.default_rng(6)
        x, y = rand_io(rng)
        assert model.net_calls == 0
        model(x, y, 0.5)
        model(x, y, 0.5)
        assert model.net_calls == 2

    def test_skip_path_linearity_with_frozen_network(self):
        model = init_model(TINY, seed=1)
        rng = np.random.default_rng(7)
        x, y = rand_io(rng, dtype=torch.float64)
        model = model.double()
        frozen = model.net(x, y, torch.full((2,), 0.5, dtype=torch.float64))
        model.net.forward = lambda *args, **kw: frozen
        a = 1.7
        t = 0.5
        diff = model(a * x, y, t) - model(x, y, t)
        c_skip, _ = scaling(torch.full((2,), t, dtype=torch.float64), TINY.sigma_data, TINY.t_min)
        expected = c_skip[:, None, None, None] * (a - 1.0) * x
        assert torch.allclose(diff, expected, atol=1e-12)


class TestInit:
    def test_same_seed_identical(self):
        a = init_model(TINY, seed=42)
        b = init_model(TINY, seed=42)
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            assert torch.equal(pa, pb)

    def test_different_seeds_differ(self):
        a = init_model(TINY, seed=0)
        b = init_model(TINY, seed=1)
        assert any(
            not torch.equal(pa, pb)
            for pa, pb in zip(a.parameters(), b.parameters())
        )

    def test_parameter_scale(self):
        model = init_model(ModelConfig(), seed=0)
        n = count_parameters(model)
        assert 100_000 < n < 300_000


class TestJvp:
    def test_jvp_matches_finite_differences(self):
        model = init_model(TINY, seed=3, dtype=torch.float64)
        # non-degenerate weights: the zero head would null the whole Jacobian
        gen = torch.Generator().manual_seed(9)
        with torch.no_grad():
            for p in (model.net.head.weight, model.net.head.bias):
                p.copy_(torch.empty(p.shape).uniform_(-0.5, 0.5, generator=gen))
        rng = np.random.default_rng(8)
        x, y = rand_io(rng, batch=1, dtype=torch.float64)
        t = torch.full((1,), 0.5, dtype=torch.float64)
        v = torch.from_numpy(rng.standard_normal(tuple(x.shape)))

        _, jvp = torch.autograd.functional.jvp(
            lambda inp: model.net(inp, y, t), x, v
        )
        h = 1e-6
        with torch.no_grad():
            fd = (model.net(x + h * v, y, t) - model.net(x - h * v, y, t)) / (2 * h)
        rel = float(torch.norm(jvp - fd) / torch.norm(fd))
        assert rel < 1e-4


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        model = init_model(TINY, seed=0)
        target = init_model(TINY, seed=1)
        meta = {"step": 7, "note": "fixture"}
        extra = {"opt/exp_avg/net.head.bias": torch.ones(2)}
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, target, meta=meta, extra_tensors=extra)

        m2, t2, meta2, extras2 = load_checkpoint(path)
        assert meta2["step"] == 7
        assert m2.cfg == TINY
        for (n1, p1), (n2, p2) in zip(model.named_parameters(), m2.named_parameters()):
            assert n1 == n2
            assert torch.equal(p1, p2)
        for p1, p2 in zip(target.parameters(), t2.parameters()):
            assert torch.equal(p1, p2)
        np.testing.assert_array_equal(
            extras2["opt/exp_avg/net.head.bias"], np.ones(2, dtype=np.float32)
        )

    def test_manifest_mismatch_rejected(self, tmp_path):
        model = init_model(TINY, seed=0)
        other = init_model(ModelConfig(base_width=6, time_embed_dim=8), seed=0)
        path = tmp_path / "bad.ckpt"
        save_checkpoint(path, model, other)  # ema tensors don't fit model's config
        with pytest.raises(CheckpointError, match="manifest"):
            load_checkpoint(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_bad_version(self, tmp_path):
        model = init_model(TINY, seed=0)
        path = tmp_path / "v.ckpt"
        save_checkpoint(path, model, model)
        raw = bytearray(path.read_bytes())
        raw[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "nope.ckpt")

    def test_truncated_file(self, tmp_path):
        model = init_model(TINY, seed=0)
        path = tmp_path / "t.ckpt"
        save_checkpoint(path, model, model)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_manifest_helper(self):
        model = init_model(TINY, seed=0)
        manifest = shape_manifest(model)
        assert manifest["net.head.weight"] == (2, 4, 1, 1)
        assert all(isinstance(v, tuple) for v in manifest.values())
