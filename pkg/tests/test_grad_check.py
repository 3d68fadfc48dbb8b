import numpy as np
import pytest

from services import autodiff as ad
from services.autodiff import Tensor
from services.diagnostics_service import GRAD_CHECK_TOLERANCE, model_case, model_variants
from services.errors import ConfigError, GradCheckError
from services.grad_check import grad_check


def test_square_at_three():
    w = Tensor([3.0], requires_grad=True, name="w")
    assert grad_check(lambda: ad.sum(ad.mul(w, w)), {"w": w}, eps=1e-5) < 1e-8


def test_parameters_are_restored_after_checking():
    w = Tensor(np.array([1.5, -0.5], dtype=np.float32), requires_grad=True, name="w")
    original = w.data
    grad_check(lambda: ad.sum(ad.mul(w, w)), {"w": w})
    assert w.data is original
    assert w.data.dtype == np.float32


def test_active_dropout_is_an_error():
    w = Tensor(np.ones(4), requires_grad=True, name="w")
    rng = np.random.default_rng(0)
    with pytest.raises(GradCheckError):
        grad_check(lambda: ad.sum(ad.dropout(w, 0.5, rng, training=True)), {"w": w})


def test_non_finite_gradient_names_the_parameter():
    w = Tensor([0.0], requires_grad=True, name="w")
    x = Tensor([np.inf])
    with pytest.raises(GradCheckError, match="w"):
        grad_check(lambda: ad.sum(ad.mul(w, x)), {"w": w})


def test_non_positive_eps_is_rejected():
    w = Tensor([1.0], requires_grad=True, name="w")
    with pytest.raises(ConfigError):
        grad_check(lambda: ad.sum(w), {"w": w}, eps=0.0)


@pytest.mark.parametrize("variant", sorted(model_variants()))
def test_model_variants_match_finite_differences(variant):
    config, task, n_classes = model_variants()[variant]
    f, params = model_case(config, task, n_classes, seed=0)
    assert grad_check(f, params, max_entries=16) < GRAD_CHECK_TOLERANCE
