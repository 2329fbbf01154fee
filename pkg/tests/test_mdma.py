import pytest
import torch
import torch.nn as nn
from hypothesis import given, settings
from hypothesis import strategies as st

from sfsc import mdma
from sfsc.channel import ChannelConfig
from sfsc.codebook import CommonOrthogonalCodebook, dequantize, is_onehot, split_codebook
from sfsc.errors import CapabilityError, ConfigurationError, InputError, ShapeError
from sfsc.losses import LossWeights
from sfsc.semnet import NetworkConfig, constellation_points
from sfsc.system import HopSpec

TINY = NetworkConfig(image_size=16, base_width=8, feature_dim=8, codebook_size=4, relay_width=8,
                     film_blocks=1, res_blocks=1)


def links(snr=10.0):
    cfg = ChannelConfig(snr_db=snr)
    return (HopSpec(cfg, 1, 2), HopSpec(cfg, 3, 4)), HopSpec(cfg, 5, 6), (HopSpec(cfg, 7, 8), HopSpec(cfg, 9, 10))


def pair(batch=2, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(batch, 3, 16, 16, generator=g), torch.rand(batch, 3, 16, 16, generator=g)


# --- split / pad / fuse --------------------------------------------------------------

@given(st.integers(2, 12), st.data())
@settings(max_examples=30, deadline=None)
def test_split_and_pad_recompose(dim, data):
    p1 = data.draw(st.integers(1, dim - 1))
    common = CommonOrthogonalCodebook(5, dim, p1, torch.randn(5, dim))
    idx = torch.nn.functional.one_hot(torch.randint(0, 5, (2, 6)), 5).float()
    s1, s2 = mdma.split_semantics(idx, common, 1), mdma.split_semantics(idx, common, 2)
    assert s1.shape[-1] == p1 and s2.shape[-1] == dim - p1
    full = idx @ common.vectors
    assert torch.equal(torch.cat([s1, s2], -1), full)
    assert torch.equal(mdma.pad_split(s1, common, 1) + mdma.pad_split(s2, common, 2), full)
    padded = mdma.pad_split(s2, common, 2)
    assert torch.all(padded[..., :p1] == 0)
    e1, e2 = split_codebook(common)
    assert torch.equal(torch.cat([e1, e2], 1), common.vectors)


def test_split_rejects_bad_user_and_width():
    common = CommonOrthogonalCodebook(4, 6, 2)
    idx = torch.eye(4)[None]
    with pytest.raises(InputError):
        mdma.split_semantics(idx, common, 3)
    with pytest.raises(ShapeError):
        mdma.pad_split(torch.zeros(1, 4, 3), common, 1)


@given(st.integers(0, 10 ** 6))
@settings(max_examples=20, deadline=None)
def test_fuse_commutative(seed):
    g = torch.Generator().manual_seed(seed)
    a, b = torch.randn(2, 5, 4, generator=g), torch.randn(2, 5, 4, generator=g)
    assert torch.equal(mdma.fuse(a, b), mdma.fuse(b, a))
    assert torch.equal(mdma.fuse(a, torch.zeros_like(a)), a)


def test_fuse_shape_mismatch():
    with pytest.raises(ShapeError):
        mdma.fuse(torch.zeros(1, 4, 3), torch.zeros(1, 4, 2))


def test_superpose_encode_is_hard_and_unit_power():
    common = CommonOrthogonalCodebook(4, 6, 3, torch.randn(4, 6))
    combined = torch.randn(2, 8, 6)
    idx, frame = mdma.superpose_encode(combined, common, constellation_points(4))
    assert is_onehot(idx)
    assert frame.shape == (2, 8)
    assert torch.allclose(frame.abs().square().mean(-1), torch.ones(2), atol=1e-5)
    with pytest.raises(ShapeError):
        mdma.superpose_encode(torch.randn(2, 8, 5), common, constellation_points(4))


# --- configuration and rate --------------------------------------------------------------------

def test_rate_accounting_tiny():
    acc = mdma.rate_accounting(TINY, mdma.MdmaConfig())
    assert acc.common_total == 64
    assert acc.common_per_user == 32
    assert acc.enhancement_per_user == 32
    assert acc.per_user == 64
    off = mdma.rate_accounting(TINY, mdma.MdmaConfig(enhancement=False))
    assert off.per_user == 32


@pytest.mark.parametrize("kwargs", [{"split_point": 0}, {"split_point": 8}, {"enhancement_stride": 3}])
def test_mdma_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        mdma.CSMDMASystem(TINY, mdma.MdmaConfig(**kwargs))


# --- learned blocks -------------------------------------------------------------------------------

def test_enhancement_blocks_shapes_and_zero_init():
    ext = mdma.EnhancementExtractor(8, 6, 8, 2)
    res = mdma.EnhancementRestorer(8, 6, 8, 2)
    r = torch.randn(3, 64, 8)
    assert ext(r).shape == (3, 32, 8)
    out = res(torch.randn(3, 32, 8))
    assert out.shape == (3, 64, 8)
    assert torch.equal(out, torch.zeros_like(out))
    with pytest.raises(ShapeError):
        res(torch.randn(3, 64, 8))


def test_combiner_starts_as_column_select():
    comb = mdma.CombinedFeatureExtractor(8, 6, 8, 3)
    a, b = torch.randn(2, 64, 8), torch.randn(2, 64, 8)
    out = comb(a, b)
    assert out.shape == (2, 64, 8)
    assert torch.equal(out[..., :3], a[..., :3]) and torch.equal(out[..., 3:], b[..., 3:])
    with pytest.raises(ShapeError):
        comb(torch.randn(2, 64, 8), torch.randn(2, 64, 7))
    with pytest.raises(ConfigurationError):
        mdma.CombinedFeatureExtractor(8, 6, 8, 8)


def test_init_codebooks_uses_distinct_features():
    torch.manual_seed(0)
    model = mdma.CSMDMASystem(TINY)
    images = pair(batch=4)
    model.codebook.init_from_features(model.encoder(images[0]).detach())
    model.init_codebooks(images, seed=2)
    for cb in (model.common, *model.enh_codebooks):
        assert torch.unique(cb.vectors.detach(), dim=0).shape[0] == cb.size
    with torch.no_grad():
        relay = [model.codebook.vectors[model.encoder(x).unsqueeze(-2).sub(model.codebook.vectors).square()
                                        .sum(-1).argmin(-1)] for x in images]
        rows = {tuple(r.tolist()) for r in model.combiner(*relay).reshape(-1, 8)}
    assert all(tuple(v.tolist()) in rows for v in model.common.vectors.detach())
    degenerate = mdma.CSMDMASystem(TINY)
    before = degenerate.common.vectors.detach().clone()
    degenerate.init_codebooks((torch.zeros(2, 3, 16, 16), torch.zeros(2, 3, 16, 16)))
    assert torch.equal(degenerate.common.vectors.detach(), before)


# --- full system --------------------------------------------------------------------------------------

def test_forward_shapes_and_onehots():
    torch.manual_seed(0)
    model = mdma.CSMDMASystem(TINY)
    ul, common, enh = links()
    out = model(pair(), ul, common, enh)
    assert len(out.reconstructions) == 2
    for rec in out.reconstructions:
        assert rec.shape == (2, 3, 16, 16)
    assert out.combined.shape == (2, 64, 8)
    for grid in (out.common_indices, *out.uplink_indices, *out.enhance_indices):
        assert is_onehot(grid)
    assert out.enhance_indices[0].shape == (2, 32, 4)


def test_disabled_enhancement_matches_split_only():
    torch.manual_seed(0)
    model = mdma.CSMDMASystem(TINY, mdma.MdmaConfig(enhancement=False)).eval()
    ul, common, enh = links()
    out = model(pair(), ul, common, enh)
    assert out.enhance_indices == []
    for u in (1, 2):
        rec = out.recovered[u - 1]
        seg = model.common.segment(u)
        outside = torch.ones(rec.shape[-1], dtype=torch.bool)
        outside[seg] = False
        assert torch.all(rec[..., outside] == 0)


def test_loss_total_is_sum_and_backprop():
    torch.manual_seed(0)
    model = mdma.CSMDMASystem(TINY)
    images = pair()
    ul, common, enh = links()
    b = model.loss(images, model(images, ul, common, enh), LossWeights(1e-2, 1e-2))
    assert b.total.item() == pytest.approx((b.per_user[0] + b.per_user[1]).item(), rel=1e-6)
    b.total.backward()
    for name in ("encoder", "codebook", "forwarder", "combiner", "common", "common_restorer", "decoder"):
        assert any(p.grad is not None and p.grad.abs().sum() > 0 for p in getattr(model, name).parameters()), name
    assert set(b.as_floats()) == {"total", "user1", "user2", "rec1", "rec2"}


def test_channel_free_pass_delivers_sent_indices():
    torch.manual_seed(0)
    model = mdma.CSMDMASystem(TINY).eval()
    ul, common, enh = links(-10.0)
    out = model(pair(), ul, common, enh, channel_free=True)
    assert out.forward_logits == [None, None] and out.common_logits is None and out.enhance_logits == [None, None]
    for u in (1, 2):
        split = mdma.pad_split(mdma.split_semantics(out.common_indices, model.common, u), model.common, u)
        residual = model.enh_feature_restorers[u - 1](
            dequantize(out.enhance_indices[u - 1], model.enh_codebooks[u - 1]))
        assert torch.equal(out.recovered[u - 1], split + residual)
    loss = model.loss(pair(), out, LossWeights(1e-2, 1e-2))
    assert torch.isfinite(loss.total)


def test_ideal_uplink_skips_forwarder():
    torch.manual_seed(0)
    model = mdma.CSMDMASystem(TINY, mdma.MdmaConfig(ideal_uplink=True))
    ul, common, enh = links()
    out = model(pair(), ul, common, enh)
    assert out.forward_logits == [None, None]


def test_load_sfsc_copies_shared_parts():
    from sfsc.system import SFSCSystem
    torch.manual_seed(1)
    sfsc = SFSCSystem(TINY)
    model = mdma.CSMDMASystem(TINY)
    model.load_sfsc(sfsc.state_dict())
    for name in ("encoder", "codebook", "forwarder", "decoder"):
        for a, b in zip(getattr(model, name).parameters(), getattr(sfsc, name).parameters()):
            assert torch.equal(a, b)


def test_extract_enhancement_helper():
    torch.manual_seed(0)
    model = mdma.CSMDMASystem(TINY)
    f = torch.randn(2, 64, 8)
    idx, frame = model.extract_enhancement(1, f, torch.zeros_like(f))
    assert idx.shape == (2, 32, 4) and is_onehot(idx)
    assert frame.shape == (2, 32)
    with pytest.raises(ShapeError):
        model.extract_enhancement(1, f, torch.zeros(2, 64, 7))


# --- superposition diagnostic --------------------------------------------------------------------------

def test_diagnostic_exact_for_linear_decoder():
    torch.manual_seed(0)
    lin = nn.Linear(6, 5).double()
    x = torch.randn(4, 3, 6, dtype=torch.float64)
    s = torch.randn(4, 3, 6, dtype=torch.float64)
    out = mdma.diagnose_superposition(lin, x, s)
    assert out["direct"] == pytest.approx(out["first_order"], rel=1e-10)


def test_diagnostic_small_residual_on_decoder():
    from sfsc.semnet import SemanticDecoder
    torch.manual_seed(0)
    dec = SemanticDecoder(TINY).double()
    x = torch.randn(3, 64, 8, dtype=torch.float64)
    direction = torch.randn_like(x)
    split = x - 1e-2 * direction / direction.norm() * x.norm()
    out = mdma.diagnose_superposition(dec, x, split)
    assert abs(out["direct"] - out["first_order"]) / out["direct"] < 0.2


def test_diagnostic_needs_differentiable_decoder():
    class Lookup(nn.Module):
        differentiable = False

        def forward(self, x):
            return x.round()

    with pytest.raises(CapabilityError):
        mdma.diagnose_superposition(Lookup(), torch.zeros(1, 2, 2), torch.zeros(1, 2, 2))
    with pytest.raises(ShapeError):
        mdma.diagnose_superposition(nn.Identity(), torch.zeros(1, 2, 2), torch.zeros(1, 2, 3))
