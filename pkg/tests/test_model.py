"""
Tests for the backbone, both network stages, the residue module and the
full forward pass.
"""

import copy

import pytest
import torch

from src.config import BackboneConfig, LossWeights, ModelConfig
from src.errors import ChannelCountError, ConfigurationError, ResourceError, ShapeError
from src.losses import DSRNetCriterion
from src.models.models import FeaturePair
from src.networks.backbone import (
    build_backbone,
    build_perceptual_extractor,
    build_vgg19_features,
    extract_backbone_features,
)
from src.networks.dsrnet import (
    DSDNet,
    LRM,
    dsdnet_forward,
    dsfnet_forward,
    dsrnet_forward,
    init_model_params,
    lrm_forward,
)


def image(h=64, w=64, n=1, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(n, 3, h, w, generator=g, dtype=dtype)


# ---------------------------------------------------------------- backbone

def test_backbone_grid_shapes(vgg_features):
    feats = extract_backbone_features(image(), build_backbone(features=vgg_features))
    assert [f.shape[-1] for f in feats] == [64, 32, 16, 8, 4]
    assert [f.shape[1] for f in feats] == [64, 128, 256, 512, 512]


def test_backbone_rejects_indivisible_size(vgg_features):
    with pytest.raises(ShapeError):
        extract_backbone_features(image(50, 50), build_backbone(features=vgg_features))


def test_backbone_missing_is_resource_error():
    with pytest.raises(ResourceError):
        extract_backbone_features(image(), None)


def test_random_backbone_is_deterministic():
    a = build_backbone(BackboneConfig(random_init=True, seed=4))
    b = build_backbone(BackboneConfig(random_init=True, seed=4))
    x = image(32, 32)
    assert all(torch.equal(fa, fb) for fa, fb in zip(a(x), b(x)))


def test_backbone_is_frozen(vgg_features):
    assert not any(p.requires_grad for p in vgg_features.parameters())
    assert not vgg_features.training


def test_missing_weights_file(tmp_path):
    with pytest.raises(ResourceError):
        build_vgg19_features(BackboneConfig(weights_path=str(tmp_path / "nope.pth")))


def test_unloadable_weights_file(tmp_path):
    path = tmp_path / "junk.pth"
    path.write_bytes(b"not a state dict")
    with pytest.raises(ResourceError):
        build_vgg19_features(BackboneConfig(weights_path=str(path)))


@pytest.mark.parametrize("prefixed", [False, True])
def test_weights_file_round_trip(tmp_path, vgg_features, prefixed):
    state = vgg_features.state_dict()
    if prefixed:
        state = {f"features.{k}": v for k, v in state.items()}
    path = tmp_path / "vgg19.pth"
    torch.save(state, path)

    loaded = build_vgg19_features(BackboneConfig(weights_path=str(path)))
    for key, value in vgg_features.state_dict().items():
        assert torch.equal(loaded.state_dict()[key], value)


def test_weights_from_environment(tmp_path, vgg_features, monkeypatch):
    path = tmp_path / "vgg19.pth"
    torch.save(vgg_features.state_dict(), path)
    monkeypatch.setenv("DSRNET_VGG_WEIGHTS", str(path))
    loaded = build_vgg19_features()
    assert torch.equal(loaded[0].weight, vgg_features[0].weight)


def test_perceptual_taps_shapes(vgg_features):
    feats = build_perceptual_extractor(features=vgg_features)(image(32, 32))
    assert [f.shape[1] for f in feats] == [64, 128, 256, 512, 512]
    assert [f.shape[-1] for f in feats] == [32, 16, 8, 4, 2]


# ---------------------------------------------------------------- stages

def test_dsfnet_output_shape(tiny_config, vgg_features):
    model = init_model_params(tiny_config, seed=0)
    x = image()
    feats = extract_backbone_features(x, build_backbone(features=vgg_features))
    pair = dsfnet_forward(x, feats, model.encoder)
    assert pair.t_stream.shape == (1, 4, 64, 64)


def test_dsfnet_rejects_wrong_grids(tiny_config, vgg_features):
    model = init_model_params(tiny_config, seed=0)
    feats = extract_backbone_features(image(), build_backbone(features=vgg_features))
    with pytest.raises(ShapeError):
        dsfnet_forward(image(32, 32), feats, model.encoder)
    with pytest.raises(ShapeError):
        dsfnet_forward(image(), feats[:4], model.encoder)


def test_tied_dsfnet_streams_equal(tiny_config, vgg_features):
    config = ModelConfig(base_width=4, pyramid_widths=(4, 4, 8, 8, 8), tied_streams=True)
    model = init_model_params(config, seed=3)
    x = image(32, 32)
    feats = extract_backbone_features(x, build_backbone(features=vgg_features))
    pair = dsfnet_forward(x, feats, model.encoder)
    assert torch.equal(pair.t_stream, pair.r_stream)


def test_dsdnet_zeroed_head_gives_bias(tiny_config):
    decoder = init_model_params(tiny_config, seed=0).decoder
    with torch.no_grad():
        decoder.head.t.weight.zero_()
        decoder.head.r.weight.zero_()
        decoder.head.t.bias.copy_(torch.tensor([0.1, 0.2, 0.3]))
        decoder.head.r.bias.fill_(0.5)
    g = torch.Generator().manual_seed(0)
    pair = FeaturePair(torch.randn(2, 4, 16, 16, generator=g), torch.randn(2, 4, 16, 16, generator=g))
    _, _, (pred_t, pred_r) = dsdnet_forward(pair, decoder)
    assert torch.allclose(pred_t[:, :, 5, 7], torch.tensor([0.1, 0.2, 0.3]).expand(2, 3))
    assert torch.all(pred_r == 0.5)


def test_dsdnet_shapes_and_errors(tiny_config):
    decoder = DSDNet(tiny_config)
    pair = FeaturePair(torch.zeros(1, 4, 16, 24), torch.zeros(1, 4, 16, 24))
    refined, prefinal, (pred_t, pred_r) = decoder(pair)
    assert refined.t_stream.shape == prefinal.t_stream.shape == (1, 4, 16, 24)
    assert pred_t.shape == pred_r.shape == (1, 3, 16, 24)
    with pytest.raises(ShapeError):
        decoder(FeaturePair(torch.zeros(1, 6, 16, 16), torch.zeros(1, 6, 16, 16)))
    with pytest.raises(ShapeError):
        decoder(FeaturePair(torch.zeros(1, 4, 10, 16), torch.zeros(1, 4, 10, 16)))


def test_lrm_range_is_open_interval(tiny_config):
    lrm = init_model_params(tiny_config, seed=0).lrm
    with torch.no_grad():
        lrm.fuse2.bias.fill_(100.0)
    pair = FeaturePair(torch.randn(1, 4, 8, 8), torch.randn(1, 4, 8, 8))
    residue = lrm_forward(pair, lrm)
    assert residue.shape == (1, 3, 8, 8)
    assert torch.all(residue < 1.0) and torch.all(residue > -1.0)


def test_lrm_zeroed_output_conv_gives_zero_residue(tiny_config):
    lrm = LRM(tiny_config)
    with torch.no_grad():
        lrm.fuse2.weight.zero_()
        lrm.fuse2.bias.zero_()
    pair = FeaturePair(torch.randn(1, 4, 8, 8), torch.randn(1, 4, 8, 8))
    assert not lrm_forward(pair, lrm).any()


# ---------------------------------------------------------------- full forward

def test_forward_shapes_and_residue_switch(tiny_config, vgg_features):
    model = init_model_params(tiny_config, seed=0).eval()
    backbone = build_backbone(features=vgg_features)
    x = image(64, 64, n=2)
    with torch.no_grad():
        full = dsrnet_forward(x, model, backbone)
        bare = dsrnet_forward(x, model, backbone, with_residue=False)
    for tensor in (full.transmission, full.reflection, full.residue):
        assert tensor.shape == (2, 3, 64, 64)
    assert torch.equal(full.transmission, bare.transmission)
    assert torch.equal(full.reflection, bare.reflection)
    assert not bare.residue.any()
    assert torch.all(full.residue.abs() < 1.0)


def test_forward_pads_and_crops(tiny_config, vgg_features):
    model = init_model_params(tiny_config, seed=0).eval()
    with torch.no_grad():
        out = dsrnet_forward(image(50, 70), model, build_backbone(features=vgg_features))
    assert out.transmission.shape == (1, 3, 50, 70)
    assert out.residue.shape == (1, 3, 50, 70)


def test_forward_pads_tiny_inputs(tiny_config, vgg_features):
    model = init_model_params(tiny_config, seed=0).eval()
    with torch.no_grad():
        out = dsrnet_forward(image(5, 9), model, build_backbone(features=vgg_features))
    assert out.transmission.shape == (1, 3, 5, 9)


def test_forward_input_errors(tiny_config, vgg_features):
    model = init_model_params(tiny_config, seed=0)
    backbone = build_backbone(features=vgg_features)
    with pytest.raises(ShapeError):
        dsrnet_forward(torch.rand(3, 32, 32), model, backbone)
    with pytest.raises(ChannelCountError):
        dsrnet_forward(torch.rand(1, 4, 32, 32), model, backbone)
    with pytest.raises(ResourceError):
        dsrnet_forward(image(32, 32), model, None)


def test_forward_is_deterministic(tiny_config, vgg_features):
    backbone = build_backbone(features=vgg_features)
    x = image(32, 48)
    with torch.no_grad():
        a = dsrnet_forward(x, init_model_params(tiny_config, seed=7).eval(), backbone)
        b = dsrnet_forward(x, init_model_params(tiny_config, seed=7).eval(), backbone)
    assert torch.equal(a.transmission, b.transmission)
    assert torch.equal(a.reflection, b.reflection)
    assert torch.equal(a.residue, b.residue)


def test_init_is_seeded(tiny_config):
    a = init_model_params(tiny_config, seed=1).state_dict()
    b = init_model_params(tiny_config, seed=1).state_dict()
    c = init_model_params(tiny_config, seed=2).state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert any(not torch.equal(a[k], c[k]) for k in a if a[k].dtype.is_floating_point)


def test_init_rejects_odd_width():
    with pytest.raises(ConfigurationError):
        init_model_params(ModelConfig(base_width=5), seed=0)
    with pytest.raises(ConfigurationError):
        init_model_params(ModelConfig(base_width=4, pyramid_widths=(4, 4, 8)), seed=0)


def test_tied_model_predicts_equal_layers(vgg_features):
    config = ModelConfig(base_width=4, pyramid_widths=(4, 4, 8, 8, 8), tied_streams=True)
    model = init_model_params(config, seed=8).eval()
    with torch.no_grad():
        out = dsrnet_forward(image(32, 32), model, build_backbone(features=vgg_features))
    assert torch.equal(out.transmission, out.reflection)


@pytest.mark.parametrize("encoder", ["dsfnet", "hypercolumn", "off"])
@pytest.mark.parametrize("interaction", ["mugi", "ytmt", "off"])
def test_ablation_variants_run(encoder, interaction, vgg_features):
    config = ModelConfig(base_width=4, pyramid_widths=(4, 4, 8, 8, 8),
                         encoder=encoder, interaction=interaction)
    model = init_model_params(config, seed=0).eval()
    backbone = build_backbone(features=vgg_features) if model.requires_backbone else None
    with torch.no_grad():
        out = dsrnet_forward(image(32, 32), model, backbone)
    assert out.transmission.shape == (1, 3, 32, 32)
    assert torch.isfinite(out.transmission).all()


def test_stem_encoder_needs_no_backbone():
    model = init_model_params(ModelConfig(base_width=4, encoder="off"), seed=0)
    assert not model.requires_backbone


# ---------------------------------------------------------------- gradients

def test_end_to_end_gradients_match_finite_differences(tiny_config, vgg_features):
    torch.manual_seed(0)
    model = init_model_params(tiny_config, seed=0).double()
    features = copy.deepcopy(vgg_features).double()
    backbone = build_backbone(features=features)
    criterion = DSRNetCriterion(LossWeights(), build_perceptual_extractor(features=features))

    x = image(32, 32, seed=1, dtype=torch.float64)
    gt_t = image(32, 32, seed=2, dtype=torch.float64)
    gt_r = image(32, 32, seed=3, dtype=torch.float64) * 0.3

    def loss_value() -> torch.Tensor:
        return criterion(x, dsrnet_forward(x, model, backbone), gt_t, gt_r).total

    model.zero_grad()
    loss_value().backward()

    picked = []
    for part in (model.encoder, model.decoder, model.lrm):
        picked.extend(list(part.parameters())[:8])
    assert len(picked) >= 20

    step = 1e-5
    for p in picked:
        idx = int(torch.argmax(p.grad.abs()))
        analytic = float(p.grad.view(-1)[idx])
        flat = p.data.view(-1)
        original = float(flat[idx])
        with torch.no_grad():
            flat[idx] = original + step
            plus = float(loss_value())
            flat[idx] = original - step
            minus = float(loss_value())
            flat[idx] = original
        numeric = (plus - minus) / (2 * step)
        assert abs(numeric - analytic) <= 1e-3 * abs(analytic) + 1e-7, (numeric, analytic)
