import numpy as np
import pytest

from helpers import constant_model, make_params
from otjr.attacks import AttackSpec
from otjr.autodiff import ContractError
from otjr.diagnostics import (DiagnosticReport, activation_profile, anchor_region_radius,
                              boundary_slice, input_grad_l1, layer_grad_ratio, sanity_suite)
from otjr.models import MLPSpec, init, predict


@pytest.fixture(scope="module")
def net():
    return init(MLPSpec((5, 9, 7, 3), "relu", 2))


@pytest.fixture(scope="module")
def batch():
    rng = np.random.default_rng(1)
    return rng.uniform(size=(15, 5)), np.arange(15) % 3


def affine_net(W, shift=5.0):
    """z = W x on [0,1]^I through an always-active identity hidden layer."""
    C, I = W.shape
    return make_params([(np.eye(I), np.full(I, shift)), (W, -shift * W.sum(1))])


def test_activation_identical_and_sorted(net, batch):
    x, _ = batch
    rep = activation_profile(net, x, x.copy(), {"checkpoint_id": "t"})
    assert np.array_equal(rep.column("clean"), rep.column("adversarial"))
    assert (np.diff(rep.column("clean")) <= 0).all()
    assert sorted(rep.column("channel")) == list(range(7))


def test_activation_zero_layer():
    p = make_params([(np.ones((4, 3)), np.zeros(4)), (np.zeros((5, 4)), np.zeros(5)),
                     (np.ones((2, 5)), np.zeros(2))])
    x = np.random.default_rng(0).uniform(size=(4, 3))
    assert not activation_profile(p, x, x).table[:, 1:].any()


def test_activation_empty(net):
    with pytest.raises(ContractError):
        activation_profile(net, np.zeros((0, 5)), np.zeros((0, 5)))


def test_input_grad_constant_model():
    rep = input_grad_l1(constant_model(4, 3), np.full((6, 4), 0.5), np.arange(6) % 3)
    assert not rep.column("mean_l1_per_input").any()


def test_input_grad_linear_closed_form():
    rng = np.random.default_rng(3)
    W = rng.normal(size=(3, 6))
    x = rng.uniform(size=(8, 6))
    y = np.arange(8) % 3
    z = x @ W.T
    s = np.exp(z - z.max(1, keepdims=True))
    s /= s.sum(1, keepdims=True)
    s[np.arange(8), y] -= 1
    expect = np.abs(s @ W).sum(1).mean() / 6
    rep = input_grad_l1(affine_net(W), x, y, ladder=("clean",))
    assert rep.table[0, 1] == pytest.approx(expect, abs=1e-9)


def test_input_grad_ladder_rows(net, batch):
    x, y = batch
    rep = input_grad_l1(net, x, y, ladder=("clean", 1, 5))
    assert rep.column("iterations").tolist() == [0, 1, 5]


def test_ratio_identity_and_count(net, batch):
    x, y = batch
    rep = layer_grad_ratio(net, x, x.copy(), y)
    assert len(rep.table) == len(net.views())
    np.testing.assert_allclose(rep.column("ratio"), 1.0, rtol=1e-12)
    assert not rep.column("flagged").any()


def test_ratio_positive_on_attacked(net, batch):
    x, y = batch
    xa = AttackSpec("pgd", 0.1, 5).run(net, x, y)
    assert (layer_grad_ratio(net, x, xa, y).column("ratio") > 0).all()


def test_ratio_flags_zero_denominator():
    rep = layer_grad_ratio(constant_model(3, 2), np.full((2, 3), 0.5), np.full((2, 3), 0.6), np.array([0, 1]))
    W_rows = rep.table[[0, 1, 2]]  # first-layer W, b and second W see zero gradients
    assert W_rows[:, 2].all() and np.isfinite(rep.table).all()


def test_boundary_center_and_constant(net, batch):
    x, _ = batch
    rng = np.random.default_rng(4)
    rep = boundary_slice(net, x[0], rng.normal(size=5), rng.normal(size=5), 0.4, 11)
    assert rep.table[5, 5] == predict(net, x[:1])[0] == rep.meta["anchor_class"]
    rep_c = boundary_slice(constant_model(5, 3), x[0], rng.normal(size=5), rng.normal(size=5), 0.4, 7)
    assert len(np.unique(rep_c.table)) == 1
    assert anchor_region_radius(rep_c) == pytest.approx(np.sqrt(0.8 ** 2 * 49 / 36 / np.pi))


def test_boundary_contract(net):
    with pytest.raises(ContractError):
        boundary_slice(net, np.zeros(5), np.ones(5), np.ones(5), 0.3, 5)
    with pytest.raises(ContractError):
        boundary_slice(net, np.zeros(5), np.ones(5), np.arange(5.0), 0.3, 1)


def test_sanity_suite_shape_and_flags(net, batch):
    x, y = batch
    rep = sanity_suite(net, x, y, steps=(1, 5), eps_ladder=(0.0, 0.1, 0.5), ladder_steps=5)
    assert len(rep.table) == 5
    eps_rows = rep.table[rep.column("axis") == 1]
    clean = float(np.mean(predict(net, x) == y))
    assert eps_rows[0, 2] == clean
    acc = rep.column("robust_acc")
    axis = rep.column("axis")
    for i in range(1, len(acc)):
        if axis[i] == axis[i - 1]:
            assert rep.column("monotone")[i] == float(acc[i] <= acc[i - 1])


def test_report_contract_and_csv(tmp_path):
    with pytest.raises(ContractError):
        DiagnosticReport("ratio", ["block", "ratio"], np.zeros((2, 2)))
    rep = DiagnosticReport("ratio", ["block", "ratio", "flagged"], [[0, 1.5, 0]], {"checkpoint_id": "abc"})
    rep.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "# kind=ratio checkpoint_id=abc" and lines[1] == "block,ratio,flagged"


def test_deterministic(net, batch):
    x, y = batch
    a = sanity_suite(net, x, y, steps=(1, 3), eps_ladder=(0.05,), ladder_steps=3)
    b = sanity_suite(net, x, y, steps=(1, 3), eps_ladder=(0.05,), ladder_steps=3)
    assert np.array_equal(a.table, b.table)
