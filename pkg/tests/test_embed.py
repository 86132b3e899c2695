import numpy as np
import pytest
import torch

from kinverify import embed
from kinverify.audiofeat import Spectrogram
from kinverify.errors import DataError, DimensionError, NumericError


def tiny_face_spec():
    return embed.face_spec(input_size=8, conv_channels=(2,), recurrent_width=6)


def tiny_voice_spec():
    return embed.voice_spec(input_shape=(16, 12), conv_channels=(2, 3), output_dim=5)


def finite_difference_gradient(net, batch, margin=1.0, h=1e-5):
    params = list(net.parameters())
    flat = torch.cat([p.detach().flatten() for p in params]).numpy()

    def set_flat(v):
        i = 0
        with torch.no_grad():
            for p in params:
                n = p.numel()
                p.copy_(torch.as_tensor(v[i : i + n].reshape(tuple(p.shape))))
                i += n

    fd = np.zeros_like(flat)
    for i in range(len(flat)):
        v = flat.copy()
        v[i] += h
        set_flat(v)
        up = embed.batch_loss(net, batch, margin)
        v[i] -= 2 * h
        set_flat(v)
        down = embed.batch_loss(net, batch, margin)
        fd[i] = (up - down) / (2 * h)
    set_flat(flat)
    return fd


class TestSpecs:
    def test_face_requires_matching_widths(self):
        with pytest.raises(DataError, match="recurrent_width"):
            embed.NetSpec("face", (8, 8), output_dim=4, recurrent_width=6)

    def test_unknown_kind(self):
        with pytest.raises(DataError):
            embed.NetSpec("audio", (8,), 4)

    def test_voice_needs_stem_and_block(self):
        with pytest.raises(DataError, match="stem"):
            embed.build_net(
                embed.NetSpec("voice", (16, 12), 4, conv_channels=(2,))
            )

    def test_default_specs_build(self):
        assert embed.build_net(embed.face_spec()) is not None
        assert embed.build_net(embed.voice_spec()) is not None


class TestForward:
    def test_face_output_dim(self, rng):
        net = embed.build_net(tiny_face_spec())
        embed.init_parameters(net, 0)
        out = embed.face_embed(rng.normal(size=(4, 8, 8)), net)
        assert out.dim == 6

    def test_face_rejects_wrong_shape(self, rng):
        net = embed.build_net(tiny_face_spec())
        with pytest.raises(DimensionError):
            net(torch.zeros(4, 9, 9))

    def test_voice_output_dim(self, rng):
        net = embed.build_net(tiny_voice_spec())
        embed.init_parameters(net, 0)
        out = net(torch.as_tensor(rng.normal(size=(16, 12))))
        assert tuple(out.shape) == (5,)

    def test_voice_embed_requires_normalized(self, rng):
        net = embed.build_net(embed.voice_spec(conv_channels=(2, 2), output_dim=4))
        embed.init_parameters(net, 0)
        spec = Spectrogram(rng.normal(size=(512, 300)), normalized=False)
        with pytest.raises(DataError, match="normalized"):
            embed.voice_embed(spec, net)

    def test_zero_parameters_give_zero_embedding(self, rng):
        net = embed.build_net(tiny_face_spec())
        with torch.no_grad():
            for p in net.parameters():
                p.zero_()
        out = embed.face_embed(rng.normal(size=(3, 8, 8)), net)
        assert np.all(out.values == 0.0)

    def test_residual_block_identity_branch(self, rng):
        # with the residual convs zeroed, the block is just the downsample
        block = embed.ResidualBlock(1, 2, 3).double()
        with torch.no_grad():
            block.conv2.weight.zero_()
            block.conv2.bias.zero_()
        x = torch.as_tensor(rng.normal(size=(1, 1, 8, 8)))
        expect = torch.tanh(block.down(x))
        assert torch.allclose(block(x), expect)

    def test_float64_everywhere(self):
        net = embed.build_net(tiny_face_spec())
        assert all(p.dtype == torch.float64 for p in net.parameters())


class TestContrastiveLoss:
    def test_analytic_points(self):
        assert embed.contrastive_loss([0.0], [1], margin=1.0) == 0.0
        assert embed.contrastive_loss([1.0], [0], margin=1.0) == 0.0
        assert embed.contrastive_loss([2.5], [0], margin=1.0) == 0.0
        assert embed.contrastive_loss([0.0], [0], margin=1.0) == 0.5

    def test_mixed_batch_formula(self, rng):
        d = rng.uniform(0, 2, 10)
        y = rng.integers(0, 2, 10)
        got = embed.contrastive_loss(d, y, margin=1.0)
        expect = (y * d**2 + (1 - y) * np.maximum(1.0 - d, 0) ** 2).sum() / 20
        assert np.isclose(got, expect)

    def test_negative_distance_rejected(self):
        with pytest.raises(DataError):
            embed.contrastive_loss([-0.1], [1])


class TestGradients:
    def test_face_gradient_matches_finite_differences(self, rng):
        net = embed.build_net(tiny_face_spec())
        embed.init_parameters(net, 3)
        batch = [
            (rng.normal(size=(5, 8, 8)), rng.normal(size=(5, 8, 8)), 1),
            (rng.normal(size=(5, 8, 8)), rng.normal(size=(5, 8, 8)), 0),
        ]
        g = embed.loss_gradient(net, batch)
        fd = finite_difference_gradient(net, batch)
        rel = np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12)
        assert rel < 1e-6

    def test_voice_gradient_matches_finite_differences(self, rng):
        net = embed.build_net(tiny_voice_spec())
        embed.init_parameters(net, 4)
        batch = [
            (rng.normal(size=(16, 12)), rng.normal(size=(16, 12)), 1),
            (rng.normal(size=(16, 12)), rng.normal(size=(16, 12)), 0),
        ]
        g = embed.loss_gradient(net, batch)
        fd = finite_difference_gradient(net, batch)
        rel = np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12)
        assert rel < 1e-6


class TestTraining:
    def _pairs(self, rng, n=8):
        return [
            (rng.normal(size=(3, 8, 8)), rng.normal(size=(3, 8, 8)), i % 2)
            for i in range(n)
        ]

    def test_deterministic(self, rng):
        pairs = self._pairs(rng)
        cfg = embed.TrainConfig(learning_rate=0.01, batch_size=4, epochs=2, seed=5)
        nets = []
        traces = []
        for _ in range(2):
            net = embed.build_net(tiny_face_spec())
            embed.init_parameters(net, 7)
            traces.append(embed.train_siamese(net, pairs, cfg))
            nets.append(net)
        assert embed.parameter_checksum(nets[0]) == embed.parameter_checksum(nets[1])
        assert traces[0] == traces[1]

    def test_loss_decreases_on_separable_pairs(self, rng):
        # same-pair positives, far-apart negatives
        a = rng.normal(size=(3, 8, 8))
        b = a + 5.0
        pairs = [(a, a.copy(), 1), (a, b, 0)] * 4
        net = embed.build_net(tiny_face_spec())
        embed.init_parameters(net, 1)
        cfg = embed.TrainConfig(learning_rate=0.05, batch_size=8, epochs=30, seed=0)
        trace = embed.train_siamese(net, pairs, cfg)
        assert trace[-1][2] < trace[0][2]

    def test_train_last_n_freezes_early_layers(self, rng):
        net = embed.build_net(tiny_face_spec())
        embed.init_parameters(net, 2)
        before = [p.detach().clone() for p in net.parameters()]
        cfg = embed.TrainConfig(
            learning_rate=0.1, batch_size=4, epochs=1, seed=0, train_last_n=2
        )
        embed.train_siamese(net, self._pairs(rng), cfg)
        after = list(net.parameters())
        n = len(after)
        for i in range(n - 2):
            assert torch.equal(before[i], after[i])
        assert any(not torch.equal(before[i], after[i]) for i in range(n - 2, n))

    def test_divergence_raises(self, rng):
        net = embed.build_net(tiny_face_spec())
        embed.init_parameters(net, 2)
        with torch.no_grad():
            list(net.parameters())[0].fill_(float("nan"))
        cfg = embed.TrainConfig(learning_rate=0.1, batch_size=4, epochs=1, seed=0)
        with pytest.raises(NumericError):
            embed.train_siamese(net, self._pairs(rng), cfg)

    def test_empty_pairs_rejected(self):
        net = embed.build_net(tiny_face_spec())
        with pytest.raises(DataError):
            embed.train_siamese(net, [], embed.TrainConfig())


class TestSerialization:
    def test_roundtrip_preserves_everything(self, rng, tmp_path):
        net = embed.build_net(tiny_voice_spec())
        embed.init_parameters(net, 11)
        path = tmp_path / "net.kvnn"
        embed.save_net(net, path)
        back = embed.load_net(path)
        assert back.spec == net.spec
        assert embed.parameter_checksum(back) == embed.parameter_checksum(net)
        x = rng.normal(size=(16, 12))
        assert torch.equal(net(torch.as_tensor(x)), back(torch.as_tensor(x)))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.kvnn"
        path.write_bytes(b"EVIL" + bytes(16))
        with pytest.raises(DataError, match="magic"):
            embed.load_net(path)
