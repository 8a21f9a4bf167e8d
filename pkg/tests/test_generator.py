import hashlib

import numpy as np
import pytest
import torch

from pftseg.checkpoint import load_decoder, save_decoder
from pftseg.errors import ConfigurationError, InitializationError, UsageError
from pftseg.generator import (
    DecoderConfig,
    SingleStreamDecoder,
    TwoStreamDecoder,
    init_two_stream,
    random_latent,
)


def tiny_config(**kw):
    base = dict(
        base_resolution=4, output_resolution=8, shared_cutoff=4,
        channels=(6, 5), latent_dim=5, dtype="float64",
    )
    base.update(kw)
    return DecoderConfig(**base)


def latent(config, seed=0):
    return random_latent(config, torch.Generator().manual_seed(seed))


def test_config_validation():
    with pytest.raises(ConfigurationError):
        DecoderConfig(base_resolution=3)
    with pytest.raises(ConfigurationError):
        DecoderConfig(shared_cutoff=32, output_resolution=32)
    with pytest.raises(ConfigurationError):
        DecoderConfig(channels=(64, 64))
    with pytest.raises(ConfigurationError):
        DecoderConfig(channels=(64, 0, 32, 16))


def test_output_shape_and_range():
    cfg = DecoderConfig()
    dec = TwoStreamDecoder(cfg)
    img, _ = dec.synthesize(latent(cfg), "seg")
    img = img.detach()
    assert img.shape == (32, 32, 3)
    assert float(img.min()) >= 0.0 and float(img.max()) <= 1.0


def test_feature_stack_channel_sum():
    cfg = DecoderConfig()
    dec = TwoStreamDecoder(cfg)
    _, feats = dec.synthesize(latent(cfg), "seg", capture_features=True)
    assert [f.shape[0] for f in feats] == [64, 64, 32, 16]
    assert sum(f.shape[0] for f in feats) == 176
    # resolutions nondecreasing along the stack
    sizes = [f.shape[1] for f in feats]
    assert sizes == sorted(sizes)


def test_synthesis_is_pure():
    cfg = tiny_config()
    dec = TwoStreamDecoder(cfg)
    w = latent(cfg)
    a, _ = dec.synthesize(w, "img")
    b, _ = dec.synthesize(w, "img")
    assert torch.equal(a, b)


def test_invalid_stream_rejected():
    cfg = tiny_config()
    dec = TwoStreamDecoder(cfg)
    with pytest.raises(UsageError):
        dec.synthesize(latent(cfg), "depth")


def test_init_two_stream_branches_equal():
    cfg = tiny_config()
    single = SingleStreamDecoder(cfg, seed=3)
    dec = init_two_stream(cfg, single)
    for (na, pa), (nb, pb) in zip(
        dec.seg.named_parameters(), dec.img.named_parameters()
    ):
        assert na == nb and torch.equal(pa, pb)
    w = latent(cfg)
    a, _ = dec.synthesize(w, "seg")
    b, _ = dec.synthesize(w, "img")
    assert torch.equal(a, b)
    # and both match the pretrained single stream
    c, _ = single.synthesize(w)
    assert torch.equal(a, c)


def test_init_two_stream_shape_mismatch():
    single = SingleStreamDecoder(tiny_config(channels=(6, 4)))
    with pytest.raises(InitializationError):
        init_two_stream(tiny_config(), single)


def test_shared_blocks_are_aliased():
    cfg = tiny_config()
    dec = init_two_stream(cfg, SingleStreamDecoder(cfg))
    w = latent(cfg)
    before_seg, _ = dec.synthesize(w, "seg")
    before_img, _ = dec.synthesize(w, "img")
    with torch.no_grad():
        dec.shared[0].conv_weight += 0.05
    after_seg, _ = dec.synthesize(w, "seg")
    after_img, _ = dec.synthesize(w, "img")
    assert not torch.equal(before_seg, after_seg)
    assert not torch.equal(before_img, after_img)


def test_parameter_tags_partition():
    dec = TwoStreamDecoder(DecoderConfig())
    tags = dec.parameter_tags()
    all_names = {n for n, _ in dec.named_parameters()}
    assert set(tags) == all_names
    covered = [
        n for s in ("shared", "seg", "img") for g in ("conv", "toRGB")
        for n, _ in dec.select_parameters({s}, {g})
    ]
    assert sorted(covered) == sorted(all_names)  # no duplicates, no gaps


def test_select_semantics():
    dec = TwoStreamDecoder(DecoderConfig())
    names = [n for n, _ in dec.select_parameters({"seg"}, {"toRGB"})]
    assert names and all(n.startswith("seg") and "torgb" in n for n in names)
    g_seg = [n for n, _ in dec.select_parameters({"seg", "shared"}, {"conv", "toRGB"})]
    assert not any(n.startswith("img") for n in g_seg)
    assert any(n.startswith("shared") for n in g_seg)
    with pytest.raises(UsageError):
        dec.select_parameters({"seg"}, {"bias"})


def test_style_locality():
    """Changing latent rows of fine blocks leaves coarse activations untouched."""
    cfg = DecoderConfig()
    dec = TwoStreamDecoder(cfg)
    w = latent(cfg)
    _, feats = dec.synthesize(w, "seg", capture_features=True)
    w2 = w.clone()
    w2[dec.n_shared:] += 1.0
    _, feats2 = dec.synthesize(w2, "seg", capture_features=True)
    for i in range(dec.n_shared):
        assert torch.equal(feats[i], feats2[i])
    assert not torch.equal(feats[-1], feats2[-1])


def _finite_difference_check(value_fn, tensor, n_probes=15, h=1e-6, seed=0):
    grad = torch.autograd.grad(value_fn(), tensor)[0]
    rng = np.random.default_rng(seed)
    flat = tensor.detach().reshape(-1)
    for _ in range(n_probes):
        k = int(rng.integers(0, flat.numel()))
        orig = float(flat[k])
        with torch.no_grad():
            flat[k] = orig + h
            fp = float(value_fn())
            flat[k] = orig - h
            fm = float(value_fn())
            flat[k] = orig
        fd = (fp - fm) / (2 * h)
        an = float(grad.reshape(-1)[k])
        rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
        assert rel < 1e-4, (k, fd, an)


def test_gradients_match_finite_differences():
    cfg = tiny_config()
    dec = TwoStreamDecoder(cfg, seed=0)
    w = (0.3 * latent(cfg, seed=5)).requires_grad_(True)
    target = torch.rand(8, 8, 3, generator=torch.Generator().manual_seed(9),
                        dtype=torch.float64)

    def value():
        img, _ = dec.synthesize(w, "seg")
        return ((img - target) ** 2).sum()

    _finite_difference_check(value, w)
    _finite_difference_check(value, dec.shared[0].conv_weight)
    _finite_difference_check(value, dec.seg[0].torgb_weight)


def test_checkpoint_round_trip(tmp_path):
    cfg = DecoderConfig(dtype="float32")
    dec = init_two_stream(cfg, SingleStreamDecoder(cfg, seed=2))
    save_decoder(tmp_path / "dec.npz", dec)
    loaded = load_decoder(tmp_path / "dec.npz")
    for (na, pa), (nb, pb) in zip(dec.named_parameters(), loaded.named_parameters()):
        assert na == nb
        assert np.array_equal(pa.detach().numpy(), pb.detach().numpy())


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(InitializationError):
        load_decoder(bad)


def param_bytes_hash(decoder):
    digest = hashlib.sha256()
    for name, p in sorted(decoder.named_parameters()):
        digest.update(name.encode())
        digest.update(p.detach().numpy().tobytes())
    return digest.hexdigest()


def test_single_stream_checkpoint(tmp_path):
    dec = SingleStreamDecoder(tiny_config())
    save_decoder(tmp_path / "s.npz", dec)
    loaded = load_decoder(tmp_path / "s.npz")
    assert param_bytes_hash(dec) == param_bytes_hash(loaded)
