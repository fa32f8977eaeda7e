import jax.numpy as jnp
import numpy as np
import pytest

from cpicmpm.autodiff import (
    FrozenBranchError,
    backward,
    finite_diff_gradient,
    grad_rollout,
    gradient_agreement,
    record,
)
from cpicmpm.cli import GRADCHECK_MODELS, gradcheck_scenario
from cpicmpm.engine import SimConfig
from cpicmpm.errors import DivergenceError
from cpicmpm.scenes import Scenario
from cpicmpm.sysid import mse_loss

FRAMES = 2


@pytest.fixture(scope="module")
def setup():
    sc = gradcheck_scenario()
    st = sc.initial_state()
    truth, guess = GRADCHECK_MODELS["newtonian"]
    ref = sc.simulator(truth).rollout(st, FRAMES)
    return sc, st, sc.simulator(guess), mse_loss(ref), ref


def test_zero_length_rollout(setup):
    _, st, sim, loss, _ = setup
    value, g = grad_rollout(sim, st, 0, loss)
    assert value == 0.0 and np.all(g == 0)


def test_zero_dt_gradient(setup):
    sc, st, _, _, _ = setup
    sim = sc.simulator(GRADCHECK_MODELS["elastic"][1])
    sim = type(sim)(sim.skeleton, sim.colliders, SimConfig(grid=sim.config.grid, dt=0.0), sim.planes)
    pos = jnp.asarray(np.repeat(st.x[None], FRAMES, 0) + 0.01)
    value, g = grad_rollout(sim, st, FRAMES, mse_loss(pos))
    assert value > 0 and np.all(g == 0)


def test_self_loss_is_stationary(setup):
    _, st, sim, _, _ = setup
    own = sim.rollout(st, FRAMES)
    value, g = grad_rollout(sim, st, FRAMES, mse_loss(own))
    assert value == 0.0
    assert np.all(g == 0)


def test_adjoint_matches_finite_differences(setup):
    _, st, sim, loss, _ = setup
    _, adj = grad_rollout(sim, st, FRAMES, loss)
    fd = finite_diff_gradient(sim, st, FRAMES, loss)
    ok, rel = gradient_agreement(adj, fd)
    assert ok.all(), rel
    assert np.abs(adj).max() > 1e-8


def test_gradient_deterministic(setup):
    _, st, sim, loss, _ = setup
    a = grad_rollout(sim, st, FRAMES, loss)[1]
    b = grad_rollout(sim, st, FRAMES, loss)[1]
    assert np.array_equal(a, b)


def test_tape_replay_bit_exact(setup):
    _, st, sim, _, ref = setup
    tape = record(sim, st, FRAMES)
    assert np.array_equal(tape.replay(), tape.positions())
    assert np.array_equal(tape.positions(), sim.rollout(st, FRAMES).positions)


def test_tape_has_contact(setup):
    _, st, sim, _, _ = setup
    tape = record(sim, st, FRAMES)
    assert any(bool(np.asarray(d.affinity).any()) for d in tape.decisions)


def test_frozen_branch_mismatch_raises(setup):
    _, st, sim, loss, _ = setup
    tape = record(sim, st, FRAMES)
    k = next(i for i, d in enumerate(tape.decisions) if np.asarray(d.affinity).any())
    d = tape.decisions[k]
    tape.decisions[k] = d._replace(tag=-d.tag)
    dL = jnp.ones((FRAMES, len(st), 3))
    with pytest.raises(FrozenBranchError):
        backward(tape, dL)
    # non-strict mode runs through on the tampered branch
    assert np.all(np.isfinite(backward(tape, dL, strict=False)))


def test_richardson_second_order(setup):
    _, st, sim, loss, _ = setup
    _, adj = grad_rollout(sim, st, FRAMES, loss)
    e1 = abs(finite_diff_gradient(sim, st, FRAMES, loss, h=0.1)[0] - adj[0])
    e2 = abs(finite_diff_gradient(sim, st, FRAMES, loss, h=0.05)[0] - adj[0])
    assert 3.0 < e1 / e2 < 5.0


def test_fd_symmetric_minimum(setup):
    _, st, sim, _, _ = setup
    own = sim.rollout(st, FRAMES)
    g = finite_diff_gradient(sim, st, FRAMES, mse_loss(own), h=1e-3)
    assert np.all(np.abs(g) < 1e-9)


def test_fd_requires_positive_step(setup):
    _, st, sim, loss, _ = setup
    with pytest.raises(ValueError):
        finite_diff_gradient(sim, st, FRAMES, loss, h=0.0)


def test_gradient_agreement_rules():
    ok, rel = gradient_agreement([1.0, 1e-7, 2.0], [1.005, 5e-7, 2.5])
    assert list(ok) == [True, True, False]
    assert rel[0] == pytest.approx(0.005 / 1.005)


def test_nan_loss_reports_divergence(setup):
    _, st, sim, _, _ = setup
    with pytest.raises(DivergenceError):
        grad_rollout(sim, st, 1, lambda pos: jnp.sum(pos) * jnp.nan)


@pytest.mark.slow
def test_newtonian_16_frames_mu():
    sc = Scenario.from_dict({})
    st = sc.initial_state()
    ref = sc.simulator().rollout(st, 16)
    sim = sc.simulator(sc.guess())
    loss = mse_loss(ref)
    _, adj = grad_rollout(sim, st, 16, loss)
    fd = finite_diff_gradient(sim, st, 16, loss, h=1e-3)
    ok, rel = gradient_agreement(adj, fd)
    assert rel[0] < 1e-2
