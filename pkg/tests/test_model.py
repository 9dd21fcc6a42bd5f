import numpy as np
import pytest

from scalevit import model as vit
from scalevit.errors import (
    BadMagicError,
    BadShapeError,
    TruncatedError,
    VersionMismatchError,
)
from scalevit.training import cross_entropy_with_grad, huber_with_grad

TINY = vit.ModelConfig(n_channels=1, image_hw=(8, 8), patch_size=4, embed_dim=16,
                       depth=1, n_heads=1, linformer_k=3)


def tiny_setup(head=vit.Head.CLASSIFY4, seed=42, batch=2):
    cfg = TINY if head is vit.Head.CLASSIFY4 else \
        vit.ModelConfig(n_channels=1, image_hw=(8, 8), patch_size=4, embed_dim=16,
                        depth=1, n_heads=1, linformer_k=3, head=head)
    params = vit.init_params(cfg, seed=seed)
    x = np.random.default_rng(seed + 1).random((batch, 1, 8, 8))
    return cfg, params, x


class TestPatchify:
    def test_single_channel_224(self):
        tokens = vit.patchify(np.zeros((1, 224, 224)), 16)
        assert tokens.shape == (196, 256)

    def test_twelve_channels_224(self):
        tokens = vit.patchify(np.zeros((12, 224, 224)), 16)
        assert tokens.shape == (12 * 196, 256)

    def test_constant_image(self):
        tokens = vit.patchify(np.full((2, 8, 8), 0.5), 4)
        np.testing.assert_array_equal(tokens, 0.5)

    def test_channel_major_row_major_order(self):
        img = np.arange(2 * 4 * 4, dtype=float).reshape(2, 4, 4)
        tokens = vit.patchify(img, 2)
        # first channel's top-left patch, then top-right, then bottom row
        np.testing.assert_array_equal(tokens[0], [0, 1, 4, 5])
        np.testing.assert_array_equal(tokens[1], [2, 3, 6, 7])
        np.testing.assert_array_equal(tokens[2], [8, 9, 12, 13])
        assert tokens[4][0] == 16  # second channel starts after 4 patches

    def test_bad_shape(self):
        with pytest.raises(BadShapeError):
            vit.patchify(np.zeros((1, 9, 8)), 4)


def full_attention_oracle(tokens, lp, n_heads):
    """Plain softmax attention, written independently of the module."""
    b, s, d = tokens.shape
    dh = d // n_heads

    def heads(m):
        return m.reshape(b, s, n_heads, dh).transpose(0, 2, 1, 3)

    q = heads(tokens @ lp["wq"] + lp["bq"])
    k = heads(tokens @ lp["wk"] + lp["bk"])
    v = heads(tokens @ lp["wv"] + lp["bv"])
    scores = np.einsum("bhid,bhjd->bhij", q, k) / np.sqrt(dh)
    e = np.exp(scores - scores.max(axis=-1, keepdims=True))
    att = e / e.sum(axis=-1, keepdims=True)
    ctx = np.einsum("bhij,bhjd->bhid", att, v)
    return ctx.transpose(0, 2, 1, 3).reshape(b, s, d) @ lp["wo"] + lp["bo"]


def random_layer_params(rng, d, s, k):
    lp = {}
    for w in ("wq", "wk", "wv", "wo"):
        lp[w] = rng.normal(size=(d, d)) * 0.3
        lp["b" + w[1]] = rng.normal(size=d) * 0.1
    lp["e_proj"] = rng.normal(size=(k, s)) * 0.3
    lp["f_proj"] = rng.normal(size=(k, s)) * 0.3
    return lp


class TestLinformerAttention:
    def test_identity_projections_reduce_to_full_attention(self):
        rng = np.random.default_rng(3)
        d, s, heads = 16, 7, 2
        lp = random_layer_params(rng, d, s, s)
        lp["e_proj"] = np.eye(s)
        lp["f_proj"] = np.eye(s)
        tokens = rng.normal(size=(3, s, d))
        out, _ = vit.linformer_attention(tokens, lp, n_heads=heads)
        np.testing.assert_allclose(out, full_attention_oracle(tokens, lp, heads),
                                   atol=1e-6)

    def test_attention_rows_are_probability_vectors(self):
        rng = np.random.default_rng(4)
        d, s, k = 8, 9, 4
        lp = random_layer_params(rng, d, s, k)
        tokens = rng.normal(size=(2, s, d))
        _, cache = vit.linformer_attention(tokens, lp, n_heads=2)
        att = cache[6]
        np.testing.assert_allclose(att.sum(axis=-1), 1.0, atol=1e-6)
        assert np.all(att >= 0)

    def test_all_equal_tokens_give_all_equal_outputs(self):
        rng = np.random.default_rng(5)
        d, s, k = 8, 6, 3
        lp = random_layer_params(rng, d, s, k)
        tokens = np.tile(rng.normal(size=(1, 1, d)), (2, s, 1))
        out, _ = vit.linformer_attention(tokens, lp, n_heads=2)
        np.testing.assert_allclose(out, np.broadcast_to(out[:, :1, :], out.shape),
                                   atol=1e-12)

    def test_shape_mismatch(self):
        rng = np.random.default_rng(6)
        lp = random_layer_params(rng, 8, 6, 3)
        with pytest.raises(BadShapeError):
            vit.linformer_attention(rng.normal(size=(1, 5, 8)), lp, n_heads=2)


class TestForward:
    def test_output_shapes(self):
        for head, n_out in ((vit.Head.CLASSIFY4, 4), (vit.Head.REGRESS2, 2)):
            cfg, params, x = tiny_setup(head, batch=3)
            out, _ = vit.forward(x, params)
            assert out.shape == (3, n_out)

    def test_zero_head_gives_uniform_softmax(self):
        cfg, params, x = tiny_setup()
        params.tensors["head_w"][:] = 0.0
        params.tensors["head_b"][:] = 0.0
        out, _ = vit.forward(x, params)
        np.testing.assert_array_equal(out, 0.0)
        probs = np.exp(out) / np.exp(out).sum(axis=1, keepdims=True)
        np.testing.assert_allclose(probs, 0.25, atol=1e-15)

    def test_eval_mode_is_deterministic(self):
        cfg, params, x = tiny_setup()
        a, _ = vit.forward(x, params, train_mode=False)
        b, _ = vit.forward(x, params, train_mode=False)
        np.testing.assert_array_equal(a, b)

    def test_dropout_deterministic_given_seed(self):
        cfg = vit.ModelConfig(n_channels=1, image_hw=(8, 8), patch_size=4,
                              embed_dim=16, depth=1, n_heads=1, linformer_k=3,
                              dropout_rate=0.3)
        params = vit.init_params(cfg, seed=0)
        x = np.random.default_rng(1).random((2, 1, 8, 8))
        a, _ = vit.forward(x, params, train_mode=True, rng=np.random.default_rng(9))
        b, _ = vit.forward(x, params, train_mode=True, rng=np.random.default_rng(9))
        c, _ = vit.forward(x, params, train_mode=True, rng=np.random.default_rng(10))
        np.testing.assert_array_equal(a, b)
        assert np.abs(a - c).max() > 0

    def test_batch_permutation_equivariance(self):
        cfg, params, x = tiny_setup(batch=5)
        perm = np.array([3, 0, 4, 1, 2])
        out, _ = vit.forward(x, params)
        out_perm, _ = vit.forward(x[perm], params)
        np.testing.assert_allclose(out_perm, out[perm], atol=1e-12)

    def test_bad_input_shape(self):
        cfg, params, _ = tiny_setup()
        with pytest.raises(BadShapeError):
            vit.forward(np.zeros((1, 2, 8, 8)), params)


def _loss_for(head):
    if head is vit.Head.CLASSIFY4:
        return cross_entropy_with_grad, np.array([0, 2])
    return (lambda o, t: huber_with_grad(o, t, 1.0)), np.array([[5.0, 3.0], [2.0, 7.0]])


def finite_difference_grads(params, x, targets, loss_fn, eps=1e-4):
    fd = {}
    for name, theta in params.tensors.items():
        g = np.zeros_like(theta)
        it = np.nditer(theta, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = theta[idx]
            theta[idx] = orig + eps
            lp, _ = loss_fn(vit.forward(x, params)[0], targets)
            theta[idx] = orig - eps
            lm, _ = loss_fn(vit.forward(x, params)[0], targets)
            theta[idx] = orig
            g[idx] = (lp - lm) / (2 * eps)
        fd[name] = g
    return fd


class TestBackward:
    @pytest.mark.parametrize("head", [vit.Head.CLASSIFY4, vit.Head.REGRESS2])
    def test_gradients_match_finite_differences(self, head):
        cfg, params, x = tiny_setup(head)
        loss_fn, targets = _loss_for(head)
        out, cache = vit.forward(x, params)
        _, d_out = loss_fn(out, targets)
        grads = vit.backward(d_out, cache)
        fd = finite_difference_grads(params, x, targets, loss_fn)
        worst = 0.0
        for name, g in grads.items():
            denom = np.maximum(np.maximum(np.abs(g), np.abs(fd[name])), 1e-6)
            worst = max(worst, (np.abs(g - fd[name]) / denom).max())
        assert worst < 1e-4

    def test_zero_upstream_gives_exactly_zero_gradients(self):
        # a loss that ignores the outputs must produce bit-exact zero grads
        # for every parameter
        cfg, params, x = tiny_setup()
        out, cache = vit.forward(x, params)
        grads = vit.backward(np.zeros_like(out), cache)
        for name, g in grads.items():
            assert not np.any(g), name

    def test_doubling_the_loss_doubles_every_gradient(self):
        cfg, params, x = tiny_setup()
        loss_fn, targets = _loss_for(vit.Head.CLASSIFY4)
        out, cache = vit.forward(x, params)
        _, d_out = loss_fn(out, targets)
        g1 = vit.backward(d_out, cache)
        out2, cache2 = vit.forward(x, params)
        g2 = vit.backward(2.0 * d_out, cache2)
        for name in g1:
            np.testing.assert_allclose(g2[name], 2.0 * g1[name], rtol=1e-9, atol=0)

    def test_grad_keys_congruent_to_params(self):
        cfg, params, x = tiny_setup()
        out, cache = vit.forward(x, params)
        grads = vit.backward(np.ones_like(out), cache)
        assert set(grads) == set(params.tensors)
        for name, g in grads.items():
            assert g.shape == params.tensors[name].shape


def closed_form_parameter_count(cfg: vit.ModelConfig) -> int:
    d, p2 = cfg.embed_dim, cfg.patch_size**2
    s, k, n_out = cfg.seq_len, cfg.linformer_k, cfg.head.n_outputs
    per_layer = (2 * d                      # ln1
                 + 4 * (d * d + d)          # q, k, v, o projections
                 + 2 * k * s                # E, F
                 + 2 * d                    # ln2
                 + d * 4 * d + 4 * d        # mlp in
                 + 4 * d * d + d)           # mlp out
    return (p2 * d + d                      # patch projection
            + cfg.n_channels * d            # channel embeddings
            + d                             # class token
            + s * d                         # positional embeddings
            + cfg.depth * per_layer
            + 2 * d                         # final layer norm
            + d * n_out + n_out)            # head


class TestParameterCount:
    @pytest.mark.parametrize("cfg", [
        TINY,
        vit.ModelConfig(n_channels=4, image_hw=(64, 64), patch_size=16,
                        embed_dim=64, depth=2, n_heads=4, linformer_k=32),
        vit.ModelConfig(n_channels=1),
    ])
    def test_matches_closed_form(self, cfg):
        assert vit.n_parameters(cfg) == closed_form_parameter_count(cfg)
        params = vit.init_params(cfg, seed=0)
        assert params.n_parameters() == closed_form_parameter_count(cfg)


class TestConfig:
    def test_invariants(self):
        with pytest.raises(BadShapeError):
            vit.ModelConfig(n_channels=1, image_hw=(10, 8), patch_size=4)
        with pytest.raises(BadShapeError):
            vit.ModelConfig(n_channels=1, embed_dim=10, n_heads=4)
        with pytest.raises(BadShapeError):
            vit.ModelConfig(n_channels=1, image_hw=(8, 8), patch_size=4,
                            linformer_k=99)

    def test_make_config_clamps_k(self):
        cfg = vit.make_config(n_channels=1, image_hw=(8, 8), patch_size=4,
                              embed_dim=16, depth=1, n_heads=1, linformer_k=64)
        assert cfg.linformer_k == cfg.seq_len == 5

    def test_json_round_trip(self):
        cfg = TINY
        assert vit.ModelConfig.from_json_dict(cfg.to_json_dict()) == cfg


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        cfg, params, _ = tiny_setup()
        path = tmp_path / "m.ckpt"
        vit.save_checkpoint(path, params, extra_meta={"note": "x"})
        loaded, meta = vit.load_checkpoint(path)
        assert meta["note"] == "x"
        assert loaded.config == cfg
        for name, t in params.tensors.items():
            np.testing.assert_array_equal(loaded.tensors[name],
                                          t.astype(np.float32).astype(np.float64))

    def test_bad_magic(self, tmp_path):
        cfg, params, _ = tiny_setup()
        path = tmp_path / "m.ckpt"
        vit.save_checkpoint(path, params)
        data = bytearray(path.read_bytes())
        data[:4] = b"NOPE"
        path.write_bytes(bytes(data))
        with pytest.raises(BadMagicError):
            vit.load_checkpoint(path)

    def test_truncated(self, tmp_path):
        cfg, params, _ = tiny_setup()
        path = tmp_path / "m.ckpt"
        vit.save_checkpoint(path, params)
        data = path.read_bytes()
        path.write_bytes(data[:len(data) // 2])
        with pytest.raises(TruncatedError):
            vit.load_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        cfg, params, _ = tiny_setup()
        path = tmp_path / "m.ckpt"
        vit.save_checkpoint(path, params)
        data = bytearray(path.read_bytes())
        data[4] = 99
        path.write_bytes(bytes(data))
        with pytest.raises(VersionMismatchError):
            vit.load_checkpoint(path)
