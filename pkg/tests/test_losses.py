import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from quakecast.losses import LossConfig, contrastive_loss, hybrid_loss, pearson_r, regression_loss

from oracles import central_difference, contrastive_oracle, regression_oracle, relative_error


def t64(a):
    return torch.tensor(np.asarray(a), dtype=torch.float64)


def test_identical_pair_is_zero():
    z = t64([[0.3, -1.2, 2.0], [0.3, -1.2, 2.0]])
    assert contrastive_loss(z).item() == 0.0


def test_hand_chosen_four_samples():
    z = [[1.0, 0.0], [0.8, 0.6], [0.0, 1.0], [-0.6, 0.8]]
    ref = contrastive_oracle(z, 0.1, [1, 0, 3, 2])
    assert contrastive_loss(t64(z), 0.1).item() == pytest.approx(ref, abs=1e-6)


@pytest.mark.parametrize("m", [2, 4, 8])
def test_random_batches_match_oracle(rng, m):
    for _ in range(20):
        z = rng.normal(size=(m, 10))
        tau = rng.uniform(0.05, 1.0)
        ref = contrastive_oracle(z.tolist(), tau, list(np.arange(m) ^ 1))
        assert contrastive_loss(t64(z), tau).item() == pytest.approx(ref, abs=1e-6)


def test_custom_partners(rng):
    z = rng.normal(size=(6, 4))
    partners = [3, 5, 4, 0, 2, 1]
    ref = contrastive_oracle(z.tolist(), 0.2, partners)
    assert contrastive_loss(t64(z), 0.2, partners).item() == pytest.approx(ref, abs=1e-9)


@pytest.mark.parametrize("partners", [[0, 1], [1, 2, 0]])
def test_bad_partners(partners):
    with pytest.raises(ValueError):
        contrastive_loss(torch.randn(len(partners), 3), partners=partners)


def test_odd_batch_rejected():
    with pytest.raises(ValueError):
        contrastive_loss(torch.randn(3, 4))


def test_high_temperature_limit(rng):
    m = 6
    z = t64(rng.normal(size=(m, 5)))
    assert contrastive_loss(z, 1e9).item() == pytest.approx(m * math.log(m - 1), rel=1e-6)


@given(st.integers(1, 6), st.integers(0, 10 ** 6))
def test_contrastive_non_negative_and_rotation_invariant(half, seed):
    g = np.random.default_rng(seed)
    z = g.normal(size=(2 * half, 4))
    q, _ = np.linalg.qr(g.normal(size=(4, 4)))
    a = contrastive_loss(t64(z)).item()
    b = contrastive_loss(t64(z @ q)).item()
    assert a >= -1e-12
    assert b == pytest.approx(a, rel=1e-9, abs=1e-9)


def test_regression_exact_match_zero():
    y = t64([2.5, 3.0, 4.5, 7.0])
    assert regression_loss(y, y.clone()).item() == 0.0


def test_regression_unit_overestimate():
    y = t64([2.5, 3.0, 4.5, 7.0])
    assert regression_loss(y + 1, y).item() == pytest.approx(0.5132, abs=1e-12)


def test_regression_matches_oracle(rng):
    for _ in range(50):
        p, t = rng.uniform(0, 9, 12), rng.uniform(2, 9.5, 12)
        assert regression_loss(t64(p), t64(t)).item() == pytest.approx(regression_oracle(p, t), abs=1e-12)


def test_swap_changes_only_asymmetric_term(rng):
    p, t = t64(rng.uniform(2, 9, 10)), t64(rng.uniform(2, 9, 10))
    no_asym = LossConfig(w_asym=0.0)
    assert regression_loss(p, t, no_asym).item() == pytest.approx(regression_loss(t, p, no_asym).item(), abs=1e-14)
    assert regression_loss(p, t).item() != pytest.approx(regression_loss(t, p).item(), abs=1e-9)


def test_zero_variance_charges_full_correlation():
    t = t64([4.0, 4.0, 4.0])
    p = t64([3.0, 4.0, 5.0])
    assert pearson_r(p, t) is None
    assert regression_loss(p, t).item() == pytest.approx(regression_oracle([3, 4, 5], [4, 4, 4]), abs=1e-14)


def test_regression_needs_two():
    with pytest.raises(ValueError):
        regression_loss(t64([1.0]), t64([1.0]))


@given(st.lists(st.floats(0, 10), min_size=2, max_size=10), st.integers(0, 1000))
def test_regression_non_negative(p, seed):
    t = np.random.default_rng(seed).uniform(2, 9.5, len(p))
    assert regression_loss(t64(p), t64(t)).item() >= 0.0


def test_hybrid_sum():
    assert hybrid_loss(0.0, 0.0) == 0.0
    assert hybrid_loss(1.5, 0.25) == 1.75
    c, r = torch.tensor(3.25, dtype=torch.float64), torch.tensor(0.5, dtype=torch.float64)
    assert hybrid_loss(c, r).item() == c.item() + r.item()


@pytest.mark.parametrize("bad", [dict(temperature=0), dict(w_mse=-1), dict(asym_factor=1.0), dict(huber_delta=0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        LossConfig(**bad)


def loss_gradient_errors(n_points, seed=0):
    """Worst relative gradient error of each loss over random float64 points."""
    g = np.random.default_rng(seed)
    worst = {"contrastive": 0.0, "regression": 0.0, "hybrid": 0.0}
    for _ in range(n_points):
        z = torch.tensor(g.normal(size=(4, 5)), dtype=torch.float64, requires_grad=True)
        p = torch.tensor(g.uniform(1, 9, 8), dtype=torch.float64, requires_grad=True)
        t = torch.tensor(g.uniform(2, 9.5, 8), dtype=torch.float64)
        # keep clear of the Huber kink and the asymmetry switch
        with torch.no_grad():
            e = p - t
            bad = (e.abs() - 1.0).abs() < 1e-3
            p[bad] += 0.01
            p[e.abs() < 1e-3] += 0.01
        fns = {
            "contrastive": (lambda: contrastive_loss(z, 0.5), [z]),
            "regression": (lambda: regression_loss(p, t), [p]),
            "hybrid": (lambda: hybrid_loss(contrastive_loss(z, 0.5), regression_loss(p, t)), [z, p]),
        }
        for name, (fn, params) in fns.items():
            grads = torch.autograd.grad(fn(), params)
            analytic = torch.cat([gr.reshape(-1) for gr in grads])
            numeric = torch.cat([central_difference(fn, x) for x in params])
            worst[name] = max(worst[name], relative_error(analytic, numeric))
    return worst


def test_loss_gradients_small():
    for name, err in loss_gradient_errors(10, seed=1).items():
        assert err < 1e-4, name
