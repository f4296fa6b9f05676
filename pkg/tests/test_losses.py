import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from bvinet.errors import ConfigError, DimensionError, TrainingAborted, ValidationError
from bvinet.losses import (
    EPS,
    LossWeights,
    SoftBinarizer,
    completion_loss,
    consistency_loss,
    mask_loss,
    total_loss,
)

D = torch.float64


def binary(rng, shape, p=0.3):
    return torch.from_numpy((rng.uniform(size=shape) < p).astype(np.float64))


def test_mask_loss_perfect_prediction(rng):
    m = binary(rng, (2, 8, 8, 1))
    assert mask_loss(m, m, m).item() <= 2 * -math.log(1 - EPS) + 1e-12


def test_mask_loss_half():
    m_gt = torch.tensor([[[[0.0]], [[1.0]]]], dtype=D)
    half = torch.full_like(m_gt, 0.5)
    assert mask_loss(half, half, m_gt).item() == pytest.approx(2 * math.log(2), abs=1e-12)


def test_mask_loss_single_pixel():
    one = torch.ones(1, 1, 1, 1, dtype=D)
    p = torch.full_like(one, 0.9)
    assert mask_loss(p, p, one).item() == pytest.approx(2 * -math.log(0.9), abs=1e-12)
    assert mask_loss(p, p, one).item() == pytest.approx(0.2107, abs=1e-4)


def test_mask_loss_rejects_out_of_range():
    m = torch.zeros(1, 2, 2, 1, dtype=D)
    with pytest.raises(ValidationError):
        mask_loss(m + 1.2, m, m)
    with pytest.raises(DimensionError):
        mask_loss(m, m, torch.zeros(1, 2, 3, 1, dtype=D))


def test_completion_loss_examples(rng):
    y = torch.from_numpy(rng.uniform(size=(2, 8, 8, 3)))
    m = binary(rng, (2, 8, 8, 1), 0.4)
    assert completion_loss(y, y, m).item() == 0.0
    assert completion_loss(y + 0.1, y, m).item() == pytest.approx(0.2, abs=1e-12)
    ones = torch.ones(2, 8, 8, 1, dtype=D)
    assert completion_loss(y + 0.3, y, ones).item() == pytest.approx(0.3, abs=1e-12)
    assert completion_loss(y - 0.3, y, torch.zeros_like(ones)).item() == pytest.approx(0.3, abs=1e-12)


def test_completion_loss_regions_weighted_by_own_area():
    y = torch.zeros(1, 1, 4, 3, dtype=D)
    y_hat = torch.tensor([[[[0.8] * 3, [0.0] * 3, [0.2] * 3, [0.2] * 3]]], dtype=D)
    m = torch.tensor([[[[1.0], [1.0], [0.0], [0.0]]]], dtype=D)
    # hole mean 0.4, valid mean 0.2
    assert completion_loss(y_hat, y, m).item() == pytest.approx(0.6, abs=1e-12)


def test_completion_loss_mask_shape():
    with pytest.raises(DimensionError):
        completion_loss(torch.zeros(1, 2, 2, 3), torch.zeros(1, 2, 2, 3), torch.zeros(1, 2, 2, 3))


def test_soft_binarizer_ramp():
    b = SoftBinarizer()
    z = torch.tensor([[0.0], [b.tau], [b.tau + 0.5 / b.kappa], [b.tau + 1 / b.kappa], [0.5]], dtype=D).expand(5, 3)
    assert b(z)[:, 0].tolist() == pytest.approx([0.0, 0.0, 0.5, 1.0, 1.0], abs=1e-12)


def test_soft_binarizer_validation():
    with pytest.raises(ConfigError):
        SoftBinarizer(tau=0.0)
    with pytest.raises(ConfigError):
        SoftBinarizer(kappa=0.0)


def test_consistency_zero_when_oracle_holds(rng):
    x = torch.from_numpy(rng.uniform(0.2, 0.8, size=(3, 8, 8, 3)))
    m = binary(rng, (3, 8, 8, 1))
    b = SoftBinarizer()
    shift = b.tau + 1 / b.kappa + 0.05
    y_hat = x + m * shift
    assert consistency_loss(m, m, y_hat, x, b).item() < 1e-6


def test_consistency_unchanged_output_equals_coverage(rng):
    x = torch.from_numpy(rng.uniform(size=(4, 8, 8, 3)))
    m = binary(rng, (4, 8, 8, 1), 0.25)
    loss = consistency_loss(torch.zeros_like(m), m, x.clone(), x)
    assert loss.item() == pytest.approx(m.mean().item(), abs=1e-6)


def test_consistency_kappa_invariance_when_saturated(rng):
    x = torch.from_numpy(rng.uniform(0.2, 0.8, size=(2, 8, 8, 3)))
    m = binary(rng, (2, 8, 8, 1))
    y_hat = x + m * 0.3
    m_l = torch.from_numpy(rng.uniform(size=(2, 8, 8, 1)))
    a = consistency_loss(m_l, m, y_hat, x, SoftBinarizer(kappa=50))
    b = consistency_loss(m_l, m, y_hat, x, SoftBinarizer(kappa=100))
    assert a.item() == pytest.approx(b.item(), abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_consistency_symmetric_and_nonnegative(seed):
    g = np.random.default_rng(seed)
    x = torch.from_numpy(g.uniform(size=(2, 4, 4, 3)))
    y_hat = torch.from_numpy(g.uniform(size=(2, 4, 4, 3)))
    a = torch.from_numpy(g.uniform(size=(2, 4, 4, 1)))
    b = torch.from_numpy(g.uniform(size=(2, 4, 4, 1)))
    l1 = consistency_loss(a, b, y_hat, x)
    assert l1.item() >= 0
    assert l1.item() == pytest.approx(consistency_loss(b, a, y_hat, x).item(), abs=1e-12)


def test_total_loss_examples():
    assert float(total_loss(1.0, 1.0, 1.0)) == pytest.approx(8.02, abs=1e-12)
    assert float(total_loss(0.0, 0.0, 0.0)) == 0.0
    assert float(total_loss(0.4, 9.0, 9.0, LossWeights(1, 0, 0))) == pytest.approx(0.4)


def test_default_weights():
    w = LossWeights()
    assert (w.mask, w.completion, w.consistency) == (3.0, 5.0, 0.02)
    with pytest.raises(ConfigError):
        LossWeights(-1, 1, 1)


@settings(max_examples=25, deadline=None)
@given(a=st.lists(st.floats(0, 10), min_size=3, max_size=3), b=st.lists(st.floats(0, 10), min_size=3, max_size=3),
       s=st.floats(0, 5))
def test_total_loss_linear(a, b, s):
    combo = [x + s * y for x, y in zip(a, b)]
    assert float(total_loss(*combo)) == pytest.approx(float(total_loss(*a)) + s * float(total_loss(*b)), rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("bad", [float("nan"), float("inf")])
def test_total_loss_non_finite_aborts(bad):
    with pytest.raises(TrainingAborted):
        total_loss(torch.tensor(bad), torch.tensor(0.1), torch.tensor(0.1))


def test_losses_nonnegative(rng):
    m = binary(rng, (2, 8, 8, 1))
    soft = torch.from_numpy(rng.uniform(size=(2, 8, 8, 1)))
    y, y_hat = (torch.from_numpy(rng.uniform(size=(2, 8, 8, 3))) for _ in range(2))
    assert mask_loss(soft, soft, m) >= 0
    assert completion_loss(y_hat, y, m) >= 0
    assert consistency_loss(soft, m, y_hat, y) >= 0
