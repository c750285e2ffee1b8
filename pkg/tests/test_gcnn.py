import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from branchforge.bnb import run_bnb
from branchforge.branching import Mixture, MostFractional, StrongBranching
from branchforge.gcnn import (
    PARAM_NAMES, AdamState, ArchConfig, ArchMismatch, ChecksumMismatch, EmptyDataset, MissingLabel, ShapeMismatch,
    TrainConfig, adam_step, forward, init_model, load_model, loss_and_grad, save_model, train,
)
from branchforge.milp import gen_assignment

SMALL = ArchConfig(embed_dim=8)


@pytest.fixture(scope="module")
def samples():
    out = []
    for seed in range(12):
        run_bnb(gen_assignment(seed + 6, 8, 3), Mixture(MostFractional(), StrongBranching(), 1.0, collector=out), 8, seed)
    assert len(out) >= 10
    return out


def _permute(s, perm):
    inv = np.argsort(perm)
    label = None if s.expert_action is None else int(inv[s.expert_action])
    return replace(s, var_features=s.var_features[perm], edge_var=inv[s.edge_var],
                   candidate_mask=s.candidate_mask[perm], expert_action=label)


def test_init_is_deterministic_and_glorot_bounded():
    a, b = init_model(SMALL, 5), init_model(SMALL, 5)
    for k in PARAM_NAMES:
        assert np.array_equal(a[k], b[k])
    assert not np.array_equal(a["W_v"], init_model(SMALL, 6)["W_v"])
    for k, t in a.tensors.items():
        if k.startswith("b"):
            assert not t.any()
        else:
            fan_in, fan_out = t.shape if t.ndim == 2 else (t.shape[0], 1)
            assert np.all(np.abs(t) <= math.sqrt(6 / (fan_in + fan_out)))


def test_probabilities_live_on_candidates(samples):
    model = init_model(SMALL, 0)
    for s in samples:
        p = forward(model, s)
        assert np.all(p[~s.candidate_mask] == 0.0)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)


def test_single_candidate_gets_probability_one(samples):
    s = samples[0]
    mask = np.zeros(s.n, dtype=bool)
    mask[s.expert_action] = True
    p = forward(init_model(SMALL, 1), replace(s, candidate_mask=mask))
    assert p[s.expert_action] == 1.0


@settings(max_examples=20, deadline=None)
@given(perm_seed=st.integers(0, 2**32 - 1), k=st.integers(0, 9))
def test_permutation_equivariance(samples, perm_seed, k):
    s = samples[k % len(samples)]
    perm = np.random.default_rng(perm_seed).permutation(s.n)
    model = init_model(ArchConfig(embed_dim=16), 3)
    np.testing.assert_allclose(forward(model, _permute(s, perm)), forward(model, s)[perm], atol=1e-12)


def test_uniform_scorer_gives_log_candidate_count(samples):
    model = init_model(SMALL, 0)
    model.tensors["w_o"][:] = 0.0
    s = next(x for x in samples if x.candidate_mask.sum() >= 2)
    c = int(s.candidate_mask.sum())
    loss, _ = loss_and_grad(model, [s])
    assert loss == pytest.approx(math.log(c), abs=1e-12)
    mask = np.zeros(s.n, dtype=bool)
    mask[s.candidates[:4] if c >= 4 else s.candidates] = True
    if mask.sum() == 4:
        four = replace(s, candidate_mask=mask, expert_action=int(s.candidates[0]))
        assert loss_and_grad(model, [four])[0] == pytest.approx(math.log(4), abs=1e-12)


def test_gradient_matches_central_differences(samples):
    model = init_model(SMALL, 11)
    # nudge biases off zero so no ReLU sits exactly at its kink
    rng = np.random.default_rng(0)
    for k in ("b_v", "b_c", "b_cc", "b_vv"):
        model.tensors[k] = rng.normal(0, 0.1, size=model.tensors[k].shape)
    batch = samples[:4]
    _, grads = loss_and_grad(model, batch)
    h = 1e-6
    for name in PARAM_NAMES:
        t = model.tensors[name]
        idx = [np.unravel_index(i, t.shape) if t.ndim else () for i in rng.choice(max(t.size, 1), size=min(5, max(t.size, 1)), replace=False)]
        for ix in idx:
            orig = t[ix] if t.ndim else float(t)
            t[ix] = orig + h
            up = loss_and_grad(model, batch)[0]
            t[ix] = orig - h
            down = loss_and_grad(model, batch)[0]
            t[ix] = orig
            num = (up - down) / (2 * h)
            ana = grads[name][ix]
            assert abs(num - ana) <= 1e-4 * max(abs(num), abs(ana), 1e-3), (name, ix, num, ana)


def test_adam_zero_gradient_leaves_weights():
    model = init_model(SMALL, 0)
    zeros = {k: np.zeros_like(v) for k, v in model.tensors.items()}
    new, st_ = adam_step(model, zeros, None, TrainConfig())
    for k in PARAM_NAMES:
        assert np.array_equal(new[k], model[k])
    assert st_.step == 1


def test_first_adam_step_moves_each_weight_by_at_most_lr():
    model = init_model(SMALL, 0)
    rng = np.random.default_rng(1)
    grads = {k: rng.normal(size=v.shape) for k, v in model.tensors.items()}
    cfg = TrainConfig(learning_rate=0.01)
    new, _ = adam_step(model, grads, AdamState.zeros_like(model), cfg)
    for k in PARAM_NAMES:
        assert np.all(np.abs(new[k] - model[k]) <= cfg.learning_rate * (1 + 1e-9))


def test_adam_rejects_mismatched_gradients():
    model = init_model(SMALL, 0)
    grads = {k: np.zeros_like(v) for k, v in model.tensors.items()}
    grads["w_o"] = np.zeros(3)
    with pytest.raises(ShapeMismatch):
        adam_step(model, grads, None, TrainConfig())


def test_training_reduces_loss_and_is_deterministic(samples):
    cfg = TrainConfig(learning_rate=1e-2, epochs=15, batch_size=4, seed=2)
    m1, l1 = train(init_model(SMALL, 0), samples, cfg)
    m2, l2 = train(init_model(SMALL, 0), samples, cfg)
    assert l1 == l2 and l1[-1] < l1[0]
    for k in PARAM_NAMES:
        assert np.array_equal(m1[k], m2[k])


def test_dropout_training_is_reproducible(samples):
    arch = ArchConfig(embed_dim=8, dropout_rate=0.3)
    cfg = TrainConfig(epochs=2, batch_size=4, seed=4)
    a = train(init_model(arch, 0), samples, cfg)
    b = train(init_model(arch, 0), samples, cfg)
    assert a[1] == b[1]
    # evaluation never applies dropout
    assert np.array_equal(forward(a[0], samples[0]), forward(a[0], samples[0]))


def test_zero_epochs_returns_model_unchanged(samples):
    model = init_model(SMALL, 0)
    out, losses = train(model, samples, TrainConfig(epochs=0))
    assert losses == []
    for k in PARAM_NAMES:
        assert np.array_equal(out[k], model[k])


def test_bad_inputs(samples):
    with pytest.raises(EmptyDataset):
        train(init_model(SMALL), [], TrainConfig())
    with pytest.raises(MissingLabel):
        loss_and_grad(init_model(SMALL), [replace(samples[0], expert_action=None)])
    with pytest.raises(ShapeMismatch):
        forward(init_model(SMALL), replace(samples[0], var_features=samples[0].var_features[:, :5]))
    for bad in (dict(learning_rate=0), dict(batch_size=0), dict(beta1=1.0), dict(epochs=-1)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_save_load_bitwise(tmp_path):
    model = init_model(ArchConfig(embed_dim=5, dropout_rate=0.1), 9)
    path = tmp_path / "m.model"
    save_model(model, path)
    back = load_model(path, expect_arch=model.arch)
    assert back.arch == model.arch and back.init_seed == 9
    for k in PARAM_NAMES:
        assert back[k].tobytes() == model[k].tobytes()
    save_model(back, tmp_path / "again.model")
    assert (tmp_path / "again.model").read_bytes() == path.read_bytes()


def test_corrupt_files_are_rejected(tmp_path):
    path = tmp_path / "m.model"
    save_model(init_model(SMALL, 0), path)
    raw = path.read_bytes()
    (tmp_path / "trunc.model").write_bytes(raw[:-8])
    with pytest.raises(ChecksumMismatch):
        load_model(tmp_path / "trunc.model")
    flipped = bytearray(raw)
    flipped[-1] ^= 0xFF
    (tmp_path / "flip.model").write_bytes(bytes(flipped))
    with pytest.raises(ChecksumMismatch):
        load_model(tmp_path / "flip.model")
    (tmp_path / "junk.model").write_bytes(b"{not json\n" + raw)
    with pytest.raises(ChecksumMismatch):
        load_model(tmp_path / "junk.model")
    with pytest.raises(ArchMismatch):
        load_model(path, expect_arch=ArchConfig(embed_dim=9))
