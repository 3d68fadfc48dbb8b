import numpy as np

from config.run_config import NumEmbeddingConfig
from models.enums import EmbeddingScheme
from services.autodiff import Tensor
from services.embeddings import NumEmbeddingService


def test_scheme_none_is_identity():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    assert NumEmbeddingService.embed_numeric(x, {}, NumEmbeddingConfig()) is x
    assert NumEmbeddingService.init_params(NumEmbeddingConfig(), 3, np.random.default_rng(0)) == {}


def test_linear_relu_embedding():
    cfg = NumEmbeddingConfig(scheme=EmbeddingScheme.LR, d_embedding=1)
    params = {"num_emb.weight": Tensor([[1.0]]), "num_emb.bias": Tensor([[0.0]])}
    out = NumEmbeddingService.embed_numeric(Tensor([[-2.0], [3.0]]), params, cfg)
    np.testing.assert_array_equal(out.data, [[0.0], [3.0]])


def test_periodic_stage_at_zero():
    frequencies = Tensor(np.random.default_rng(0).normal(0, 5, (3, 4)))
    out = NumEmbeddingService.periodic(Tensor(np.zeros((2, 3))), frequencies).data
    assert out.shape == (2, 3, 8)
    np.testing.assert_array_equal(out[..., :4], 1.0)
    np.testing.assert_array_equal(out[..., 4:], 0.0)


def test_plr_output_width_and_parameter_shapes():
    cfg = NumEmbeddingConfig(scheme=EmbeddingScheme.PLR, d_embedding=4, n_frequencies=5)
    params = NumEmbeddingService.init_params(cfg, 3, np.random.default_rng(0))
    assert params["num_emb.frequencies"].shape == (3, 5)
    assert params["num_emb.linear.weight"].shape == (3, 10, 4)
    out = NumEmbeddingService.embed_numeric(Tensor(np.ones((2, 3))), params, cfg)
    assert out.shape == (2, NumEmbeddingService.output_width(cfg, 3)) == (2, 12)
    assert (out.data >= 0).all()


def test_plr_lite_shares_the_linear_layer():
    cfg = NumEmbeddingConfig(scheme=EmbeddingScheme.PLR_LITE, d_embedding=4, n_frequencies=5)
    params = NumEmbeddingService.init_params(cfg, 3, np.random.default_rng(0))
    assert params["num_emb.linear.weight"].shape == (10, 4)
    assert params["num_emb.linear.bias"].shape == (4,)
    out = NumEmbeddingService.embed_numeric(Tensor(np.ones((2, 3))), params, cfg)
    assert out.shape == (2, 12)


def test_frequencies_follow_the_configured_scale():
    cfg = NumEmbeddingConfig(scheme=EmbeddingScheme.PLR, n_frequencies=2000, frequency_scale=0.1)
    params = NumEmbeddingService.init_params(cfg, 1, np.random.default_rng(0))
    assert 0.08 < np.std(params["num_emb.frequencies"].data) < 0.12


def test_plr_and_plr_lite_agree_on_a_single_feature():
    lite_cfg = NumEmbeddingConfig(scheme=EmbeddingScheme.PLR_LITE, d_embedding=4, n_frequencies=5)
    lite = NumEmbeddingService.init_params(lite_cfg, 1, np.random.default_rng(3))
    full = {
        "num_emb.frequencies": lite["num_emb.frequencies"],
        "num_emb.linear.weight": Tensor(lite["num_emb.linear.weight"].data[None]),
        "num_emb.linear.bias": Tensor(lite["num_emb.linear.bias"].data[None]),
    }
    x = Tensor(np.random.default_rng(4).normal(size=(7, 1)))
    expected = NumEmbeddingService.embed_numeric(x, lite, lite_cfg).data
    actual = NumEmbeddingService.embed_numeric(x, full, lite_cfg.model_copy(update={"scheme": EmbeddingScheme.PLR})).data
    np.testing.assert_allclose(actual, expected, rtol=1e-6, atol=1e-7)
