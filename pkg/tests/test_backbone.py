import numpy as np

from config.run_config import ModelConfig
from models.dataset import FeatureLayout
from models.enums import ModelKind, Task
from models.tabr import output_dim
from services.autodiff import Tensor
from services.backbone import BackboneService


def test_input_width_without_embeddings():
    assert BackboneService.input_width(ModelConfig(), FeatureLayout(n_num=8, n_bin=0, n_onehot=0)) == 8


def test_zero_input_with_zero_bias_is_zero():
    cfg = ModelConfig()
    layout = FeatureLayout(n_num=8, n_bin=0, n_onehot=0)
    params = BackboneService.init_input(cfg, layout, np.random.default_rng(0))
    params["input.bias"] = Tensor(np.zeros(cfg.d))
    out = BackboneService.input_module(np.zeros((1, 8)), params, cfg, layout)
    assert out.shape == (1, 265)
    np.testing.assert_array_equal(out.data, 0.0)


def test_encoder_without_blocks_is_identity():
    v = Tensor(np.ones((2, 4)))
    assert BackboneService.encoder_forward(v, {}, ModelConfig(d=4, encoder_blocks=0), training=False) is v


def test_block_with_zero_second_linear_is_residual_identity():
    d = 6
    params = BackboneService.init_block("block", d, np.random.default_rng(0))
    params["block.linear2.weight"] = Tensor(np.zeros((2 * d, d)))
    params["block.linear2.bias"] = Tensor(np.zeros(d))
    x = Tensor(np.random.default_rng(1).standard_normal((3, d)))
    out = BackboneService.block_forward(x, params, "block", 0.0, training=False, rng=None)
    np.testing.assert_array_equal(out.data, x.data)


def test_block_hidden_width_is_twice_d():
    params = BackboneService.init_block("block", 5, np.random.default_rng(0))
    assert params["block.linear1.weight"].shape == (5, 10)
    assert params["block.linear2.weight"].shape == (10, 5)


def test_first_encoder_block_has_no_norm():
    params = BackboneService.init_encoder(ModelConfig(d=4, encoder_blocks=2), np.random.default_rng(0))
    assert "encoder.0.norm.weight" not in params
    assert "encoder.1.norm.weight" in params


def test_zero_head_predicts_zero():
    cfg = ModelConfig(d=4)
    params = BackboneService.init_predictor(cfg, 1, np.random.default_rng(0))
    params["head.linear.weight"] = Tensor(np.zeros((4, 1)))
    params["head.linear.bias"] = Tensor(np.zeros(1))
    out = BackboneService.predictor_forward(Tensor(np.ones((3, 4))), params, cfg, training=False)
    np.testing.assert_array_equal(out.data, np.zeros((3, 1)))


def test_output_widths_per_task():
    assert output_dim(Task.MULTICLASS, 9) == 9
    assert output_dim(Task.BINCLASS, 2) == 1
    assert output_dim(Task.REGRESSION, None) == 1
    params = BackboneService.init_predictor(ModelConfig(d=4), 9, np.random.default_rng(0))
    assert params["head.linear.weight"].shape == (4, 9)


def test_mlp_forward_is_deterministic_in_eval_mode():
    cfg = ModelConfig(kind=ModelKind.MLP, d=6, mlp_layers=1, ffn_dropout=0.5)
    layout = FeatureLayout(n_num=2, n_bin=1, n_onehot=2)
    params = BackboneService.init_mlp(cfg, layout, 1, np.random.default_rng(0))
    features = np.random.default_rng(1).standard_normal((4, 5))
    first = BackboneService.mlp_forward(features, params, cfg, layout, training=False)
    second = BackboneService.mlp_forward(features, params, cfg, layout, training=False)
    assert first.shape == (4, 1)
    np.testing.assert_array_equal(first.data, second.data)
