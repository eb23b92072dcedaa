import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from selfspec.nn import (
    argmax_token,
    cosine_lr,
    cross_entropy,
    grad_check,
    quadratic_loss,
    rms_norm,
    sequence_cross_entropy,
    softmax,
)


def test_softmax_uniform():
    out = softmax(torch.zeros(4))
    assert torch.allclose(out, torch.full((4,), 0.25))


def test_softmax_saturation_is_stable():
    out = softmax(torch.tensor([1000.0, 0.0]))
    assert abs(out[0].item() - 1.0) < 1e-12
    assert abs(out[1].item() - 0.0) < 1e-12


def test_softmax_hand_case():
    out = softmax(torch.tensor([math.log(1.0), math.log(3.0)]))
    assert torch.allclose(out, torch.tensor([0.25, 0.75]), atol=1e-7)


def test_softmax_rejects_non_finite():
    with pytest.raises(ValueError):
        softmax(torch.tensor([1.0, float("nan")]))
    with pytest.raises(ValueError):
        softmax(torch.tensor([float("inf"), 0.0]))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(min_value=-50, max_value=50), min_size=1, max_size=40))
def test_softmax_sums_to_one(values):
    out = softmax(torch.tensor(values, dtype=torch.float32))
    assert abs(out.sum().item() - 1.0) < 1e-6
    assert (out >= 0).all()


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(min_value=-30, max_value=30), min_size=2, max_size=20),
    st.floats(min_value=-20, max_value=20),
)
def test_softmax_shift_invariant(values, shift):
    x = torch.tensor(values, dtype=torch.float64)
    assert torch.allclose(softmax(x), softmax(x + shift), atol=1e-12)


def test_cross_entropy_uniform():
    loss = cross_entropy(torch.zeros(8), 3)
    assert abs(loss.item() - math.log(8)) < 1e-6


def test_cross_entropy_confident_correct():
    loss = cross_entropy(torch.tensor([10.0, 0.0, 0.0], dtype=torch.float64), 0)
    assert abs(loss.item() - math.log1p(2 * math.exp(-10))) < 1e-9


def test_cross_entropy_confident_wrong():
    loss = cross_entropy(torch.tensor([0.0, 10.0, 0.0], dtype=torch.float64), 0)
    expected = 10 + math.log1p(2 * math.exp(-10))  # ~10.0001
    assert abs(loss.item() - expected) < 1e-9


def test_cross_entropy_target_range():
    with pytest.raises(ValueError):
        cross_entropy(torch.zeros(4), 4)
    with pytest.raises(ValueError):
        cross_entropy(torch.zeros(4), -1)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(min_value=-30, max_value=30), min_size=1, max_size=16),
    st.integers(min_value=0, max_value=1000),
)
def test_cross_entropy_matches_log_softmax(values, t_raw):
    x = torch.tensor(values, dtype=torch.float64)
    t = t_raw % len(values)
    loss = cross_entropy(x, t)
    assert abs(loss.item() + torch.log(softmax(x))[t].item()) < 1e-6
    assert loss.item() >= 0.0


def test_sequence_cross_entropy_matches_scalar_op():
    torch.manual_seed(0)
    logits = torch.randn(3, 5, 7, dtype=torch.float64)
    targets = torch.randint(0, 7, (3, 5))
    batched = sequence_cross_entropy(logits, targets)
    manual = torch.stack([
        cross_entropy(logits[i, j], int(targets[i, j]))
        for i in range(3) for j in range(5)
    ]).mean()
    assert torch.allclose(batched, manual, atol=1e-12)


def test_rms_norm_identity_on_unit_input():
    x = torch.ones(6)
    assert torch.allclose(rms_norm(x, torch.ones(6)), x, atol=1e-5)


def test_rms_norm_hand_case():
    out = rms_norm(torch.tensor([3.0, 4.0]), torch.ones(2))
    scale = math.sqrt(12.5 + 1e-5)
    assert torch.allclose(out, torch.tensor([3.0 / scale, 4.0 / scale]), atol=1e-6)


def test_rms_norm_zero_gain():
    out = rms_norm(torch.tensor([1.0, -2.0, 3.0]), torch.zeros(3))
    assert torch.equal(out, torch.zeros(3))


def test_argmax_token_breaks_ties_low():
    assert argmax_token(torch.tensor([0.0, 5.0, 5.0, 1.0])) == 1
    assert argmax_token(torch.tensor([2.0, 2.0])) == 0


def test_grad_check_quadratic():
    p = torch.tensor([1.0, 2.0], dtype=torch.float64, requires_grad=True)
    err = grad_check(lambda: quadratic_loss([p]), [p], delta=1e-5)
    assert err < 1e-6


def test_grad_check_rejects_bad_delta():
    p = torch.tensor([1.0], dtype=torch.float64, requires_grad=True)
    with pytest.raises(ValueError):
        grad_check(lambda: quadratic_loss([p]), [p], delta=1e-2)


def test_grad_check_rejects_non_finite_loss():
    p = torch.tensor([1.0], dtype=torch.float64, requires_grad=True)
    with pytest.raises(ValueError):
        grad_check(lambda: (p / 0.0).sum(), [p])


def test_cosine_lr_shape():
    total, peak = 100, 1.0
    warm = cosine_lr(0, total, peak)
    assert 0 < warm <= peak
    assert cosine_lr(1, total, peak) <= peak
    late = cosine_lr(total - 1, total, peak)
    assert late == pytest.approx(0.1 * peak, rel=1e-6)
