import copy

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smldist import core
from smldist.core import ShapeError, Tensor
from smldist.data import SynthSpec, WindowSet, fit_scaler, split_by_subject, synth_windows
from smldist.distill import (
    DistillConfig,
    PairingError,
    TrainConfig,
    TrainReport,
    auto_search_select,
    check_pairing,
    clone_memory,
    conditional_target,
    finetune_final_stage,
    hinton_loss,
    logits_loss_LD,
    run_mode,
    smldist,
    stage_distill,
    stage_loss,
    train_teacher,
)
from smldist.nn import HeadEnsemble, LinearHead, ModelConfig, build_network, param_count


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def softmax(z):
    e = np.exp(z - np.max(z))
    return e / e.sum()


SMALL_T = ModelConfig(channels=[4, 6], strides=[2, 2], width=8, depth=2, n_patterns=4)
SMALL_S = ModelConfig(channels=[4, 6], strides=[2, 2], width=3, depth=1, n_patterns=4)


@pytest.fixture(scope="module")
def tiny_data():
    spec = SynthSpec(windows_per_class=3, n_subjects=3, window_seconds=1.0, seed=1)
    train, val = split_by_subject(synth_windows(spec), 0.3, 0)
    p = fit_scaler("robust", train.X)
    return train.scaled(p), val.scaled(p)


# stage loss -------------------------------------------------------------------


def test_stage_loss_identical_is_zero():
    x = np.random.default_rng(0).standard_normal((2, 3, 8))
    assert stage_loss(x, t64(x)).item() == 0.0


def test_stage_loss_length_two_fixture():
    assert stage_loss([[1.0, 0.0]], t64([[0.0, 0.0]])).item() == pytest.approx(0.5 + np.sqrt(2) / 2, abs=1e-9)


def test_stage_loss_length_one_fixture():
    assert stage_loss([[2.0]], t64([[0.0]])).item() == pytest.approx(4.0, abs=1e-12)


def test_stage_loss_batch_average():
    a = np.array([[[1.0, 0.0]], [[2.0]*2]])
    s = np.zeros_like(a)
    per = [stage_loss(a[i], t64(s[i])).item() for i in range(2)]
    assert stage_loss(a, t64(s)).item() == pytest.approx(np.mean(per), abs=1e-12)


def test_stage_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        stage_loss(np.zeros((1, 2, 3)), t64(np.zeros((1, 2, 4))))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 9), st.integers(0, 2**31 - 1))
def test_stage_loss_non_negative_and_zero_iff_equal(c, L, seed):
    r = np.random.default_rng(seed)
    T = r.standard_normal((2, c, L))
    S = T.copy()
    assert stage_loss(T, t64(S)).item() == 0.0
    S[0, r.integers(c), r.integers(L)] += 0.1
    assert stage_loss(T, t64(S)).item() > 0


# conditional target / logits losses ---------------------------------------------


def test_conditional_target_teacher_correct():
    p = np.array([0.7, 0.2, 0.1])
    q = conditional_target(np.log(p)[None], [0], gamma=1.0)
    np.testing.assert_allclose(q[0], softmax(p), atol=1e-12)


def test_conditional_target_teacher_wrong():
    p = np.array([0.2, 0.7, 0.1])
    q = conditional_target(np.log(p)[None], [0], gamma=1.0)
    np.testing.assert_allclose(q[0], softmax(np.array([1.0, 0.7, 0.1])), atol=1e-12)
    assert q[0, 0] > p[0]


def test_conditional_target_single_class():
    assert conditional_target([[3.0]], [0], 0.5).tolist() == [[1.0]]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.floats(0.01, 1.0), st.integers(0, 2**31 - 1))
def test_conditional_target_rows_are_distributions(C, gamma, seed):
    r = np.random.default_rng(seed)
    z = r.standard_normal((6, C)) * 3
    y = r.integers(0, C, 6)
    q = conditional_target(z, y, gamma)
    np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-6)
    right = np.argmax(z, axis=1) == y
    P = np.exp(z - z.max(axis=1, keepdims=True))
    P /= P.sum(axis=1, keepdims=True)
    for i in np.flatnonzero(right):
        assert np.array_equal(q[i], conditional_target(z[i : i + 1], y[i : i + 1], gamma)[0])
        np.testing.assert_allclose(q[i], softmax(P[i]), atol=1e-15)


def test_hinton_lambda_zero_is_ce():
    r = np.random.default_rng(0)
    s, t, y = r.standard_normal((5, 4)), r.standard_normal((5, 4)), r.integers(0, 4, 5)
    ce = core.cross_entropy(t64(s), y).item()
    assert hinton_loss(t64(s), t, y, 0.0, 4.0).item() == pytest.approx(ce, abs=1e-7)
    assert logits_loss_LD(t64(s), t, y, 0.0, 4.0, 1.0).item() == pytest.approx(ce, abs=1e-7)


def test_hinton_hand_value():
    z = np.array([1.0, 0.0, -1.0])
    p = softmax(z)
    expected = -np.log(p[0]) - np.sum(p * np.log(p))
    assert hinton_loss(t64(z[None]), z[None], [0], 1.0, 1.0).item() == pytest.approx(expected, abs=1e-12)


def test_hinton_large_tau_is_uniform_ce():
    r = np.random.default_rng(1)
    s, t, y = r.standard_normal((3, 5)), r.standard_normal((3, 5)), np.array([0, 1, 2])
    tau = 1e6
    ce = core.cross_entropy(t64(s), y).item()
    soft = hinton_loss(t64(s), t, y, 1.0, tau).item() - ce
    uniform = core.soft_cross_entropy(t64(s / tau), np.full((3, 5), 0.2)).item()
    assert soft == pytest.approx(uniform, abs=1e-3)


def test_ld_matches_hinton_with_softmaxed_target_when_teacher_correct():
    r = np.random.default_rng(2)
    t = r.standard_normal((6, 4)) * 3
    y = np.argmax(t / 4.0, axis=1)
    s = r.standard_normal((6, 4))
    ld = logits_loss_LD(t64(s), t, y, 1.0, 4.0, 1.0).item()
    P = np.apply_along_axis(softmax, 1, t / 4.0)
    Q = np.apply_along_axis(softmax, 1, P)
    manual = core.cross_entropy(t64(s), y).item() + core.soft_cross_entropy(t64(s / 4.0), Q).item()
    assert ld == pytest.approx(manual, abs=1e-6)


def test_ld_hand_three_class():
    s = np.array([[0.5, -0.2, 0.1]])
    t = np.array([[0.0, 2.0, 0.0]])
    y = [0]
    q = softmax(np.array([1.0, softmax(t[0] / 2)[1], softmax(t[0] / 2)[2]]))
    ps = softmax(s[0] / 2)
    expected = -np.log(softmax(s[0])[0]) - np.sum(q * np.log(ps))
    assert logits_loss_LD(t64(s), t, y, 1.0, 2.0, 1.0).item() == pytest.approx(expected, abs=1e-9)


# pairing and memory cloning --------------------------------------------------------


def test_pairing_mismatch_names_stage():
    t = build_network(SMALL_T, 3, 50, 6)
    s = build_network(ModelConfig(channels=[4, 7], strides=[2, 2], width=3, depth=1, n_patterns=4), 3, 50, 6)
    with pytest.raises(PairingError, match="stage 1"):
        check_pairing(t, s)


def test_clone_memory_copies_outputs_and_importance():
    t = build_network(SMALL_T, 3, 50, 6, seed=1)
    s = build_network(SMALL_S, 3, 50, 6, seed=2)
    t.ensemble.weights.data[:] = [0.3, -0.4]
    clone_memory(t.ensemble, s.ensemble)
    p = Tensor(np.random.default_rng(0).standard_normal((4, 6)).astype(np.float32))
    assert np.array_equal(t.ensemble(p).data, s.ensemble(p).data)
    assert np.array_equal(t.ensemble.importance(), s.ensemble.importance())


def test_clone_memory_head_count_mismatch():
    r = np.random.default_rng(0)
    two = HeadEnsemble([LinearHead(4, 2, r), LinearHead(4, 2, r)])
    one = HeadEnsemble([LinearHead(4, 2, r)])
    with pytest.raises(PairingError):
        clone_memory(two, one)


def test_clone_memory_names_differing_head():
    t = build_network(SMALL_T, 3, 50, 6)
    s = build_network(SMALL_S.__class__(**{**SMALL_S.to_dict(), "n_patterns": 5}), 3, 50, 6)
    with pytest.raises(PairingError, match="head 1"):
        clone_memory(t.ensemble, s.ensemble)


def test_clone_is_a_copy_not_an_alias():
    t = build_network(SMALL_T, 3, 50, 6, seed=1)
    s = build_network(SMALL_S, 3, 50, 6, seed=2)
    clone_memory(t.ensemble, s.ensemble)
    s.ensemble.heads[0].weight.data += 1
    assert not np.array_equal(s.ensemble.heads[0].weight.data, t.ensemble.heads[0].weight.data)


# auto-search ---------------------------------------------------------------------


@pytest.mark.parametrize("w,expected", [((np.log(0.7), np.log(0.3)), 0), ((0.0, 0.0), 0), ((0.0, 1.0), 1)])
def test_auto_search_choice(w, expected):
    net = build_network(SMALL_S, 3, 50, 6)
    net.ensemble.weights.data[:] = w
    sel = auto_search_select(net)
    assert sel.head is net.ensemble.heads[expected]
    assert sel.ensemble is None and sel.config.heads == [SMALL_S.heads[expected]]


def test_auto_search_output_is_raw_head_output():
    net = build_network(SMALL_S, 3, 50, 6, seed=3)
    net.ensemble.weights.data[:] = [2.0, 0.0]
    head = net.ensemble.heads[0]
    x = np.random.default_rng(1).standard_normal((5, 3, 50)).astype(np.float32)
    sel = auto_search_select(net)
    _, pooled = net.backbone(Tensor(x))
    assert np.array_equal(sel.predict(x), head(pooled).data)
    assert param_count(sel) == param_count(net.backbone) + param_count(head)


# training loops ------------------------------------------------------------------


def test_stage_distill_copy_is_fixed_point(tiny_data):
    train, _ = tiny_data
    t = build_network(SMALL_T, 3, 50, 6, seed=1)
    s = copy.deepcopy(t)
    before = s.state_dict()
    report = TrainReport()
    stage_distill(t, s, train.X, DistillConfig(stage_epochs=2, batch_size=8), report)
    assert all(v == 0.0 for curve in report.stage_losses for v in curve)
    after = s.state_dict()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_stage_distill_loss_decreases(tiny_data):
    train, _ = tiny_data
    t = build_network(SMALL_T, 3, 50, 6, seed=1)
    s = build_network(SMALL_S, 3, 50, 6, seed=2)
    report = TrainReport()
    stage_distill(t, s, train.X, DistillConfig(stage_epochs=3, lr=3e-3, batch_size=8), report)
    first = report.stage_losses[0]
    assert len(report.stage_losses) == 2 and len(first) == 3
    assert first[2] < first[0]


def test_stage_distill_leaves_teacher_untouched(tiny_data):
    train, _ = tiny_data
    t = build_network(SMALL_T, 3, 50, 6, seed=1)
    before = t.state_dict()
    stage_distill(t, build_network(SMALL_S, 3, 50, 6), train.X, DistillConfig(stage_epochs=1, batch_size=8))
    assert all(np.array_equal(before[k], v) for k, v in t.state_dict().items())


def test_stage_distill_signature_takes_no_labels():
    import inspect

    assert "y" not in inspect.signature(stage_distill).parameters
    assert list(inspect.signature(stage_loss).parameters) == ["teacher_feats", "student_feats"]


def test_clone_then_zero_epochs_matches_teacher_heads(tiny_data):
    train, val = tiny_data
    t = build_network(SMALL_T, 3, 50, 6, seed=1)
    s = build_network(SMALL_S, 3, 50, 6, seed=2)
    heads_before = [copy.deepcopy(h) for h in t.ensemble.heads]
    out = finetune_final_stage(t, s, train, val, DistillConfig(ft_epochs=0))
    p = Tensor(np.random.default_rng(5).standard_normal((3, 6)).astype(np.float32))
    assert np.array_equal(out.head(p).data, heads_before[0](p).data)


def test_finetune_epoch_count_and_report(tiny_data):
    train, val = tiny_data
    t = build_network(SMALL_T, 3, 50, 6, seed=1)
    s = build_network(SMALL_S, 3, 50, 6, seed=2)
    report = TrainReport()
    out = finetune_final_stage(t, s, train, val, DistillConfig(ft_epochs=3, batch_size=8), report)
    assert report.ft_epochs == 3 and len(report.epoch_loss) == 3 and len(report.val_accuracy) == 3
    assert len(report.q_hat) == 3 and all(abs(sum(q) - 1) < 1e-6 for q in report.q_hat)
    assert out.ensemble is None and report.selected_head in (0, 1)


def test_all_flags_off_is_plain_finetune(tiny_data):
    train, val = tiny_data
    t = build_network(SMALL_T, 3, 50, 6, seed=1)
    cfg = DistillConfig(ft_epochs=2, batch_size=8).ablated("sml")
    a, rep = smldist(t, build_network(SMALL_S, 3, 50, 6, seed=2), train, val, cfg)
    # same run with no teacher involvement at all
    b = finetune_final_stage(None, build_network(SMALL_S, 3, 50, 6, seed=2), train, val, cfg)
    assert rep.mode == "raw-student-equivalent fine-tune" and rep.stage_losses == []
    assert all(np.array_equal(x, y) for x, y in zip(a.state_dict().values(), b.state_dict().values()))


def test_memory_requires_ensembles(tiny_data):
    train, val = tiny_data
    t = build_network(SMALL_T, 3, 50, 6)
    single = build_network(ModelConfig(**{**SMALL_S.to_dict(), "heads": ["linear"], "ensemble": False}), 3, 50, 6)
    with pytest.raises(PairingError):
        finetune_final_stage(t, single, train, val, DistillConfig(ft_epochs=0))


def test_train_teacher_deterministic_and_records_q_hat(tiny_data):
    train, val = tiny_data
    cfg = TrainConfig(epochs=3, lr=3e-3, batch_size=8, seed=4)
    a, ra = train_teacher(build_network(SMALL_T, 3, 50, 6, seed=1), train, val, cfg)
    b, rb = train_teacher(build_network(SMALL_T, 3, 50, 6, seed=1), train, val, cfg)
    assert all(np.array_equal(x, y) for x, y in zip(a.state_dict().values(), b.state_dict().values()))
    assert len(ra.q_hat) == 3 and ra.epoch_loss == rb.epoch_loss
    assert ra.best_val_accuracy == max(ra.val_accuracy)
    assert ra.epoch_loss[-1] < ra.epoch_loss[0]


def test_train_teacher_nan_raises(tiny_data):
    train, val = tiny_data
    bad = WindowSet(train.X.copy(), train.y, train.subjects)
    bad.X[0, 0, 0] = np.nan
    with pytest.raises(core.NumericError):
        train_teacher(build_network(SMALL_T, 3, 50, 6), bad, val, TrainConfig(epochs=1, batch_size=8))


# config ------------------------------------------------------------------------


def test_run_modes():
    cfg = DistillConfig()
    assert run_mode(cfg) == "SMLDist"
    assert run_mode(cfg.ablated("s")) == "SMLDist w/o S"
    assert run_mode(cfg.ablated("ml")) == "SMLDist w/o M, L"
    assert run_mode(cfg.ablated("sml")) == "raw-student-equivalent fine-tune"


def test_distill_config_validation():
    for bad in (dict(tau=0), dict(lam=-1), dict(ft_epochs=-1), dict(logits_loss="mse"), dict(lr=0)):
        with pytest.raises(ValueError):
            DistillConfig(**bad).validate()
    with pytest.raises(ValueError):
        DistillConfig().ablated("x")


def test_epoch_budgets():
    cfg = DistillConfig(stage_epochs=[1, 2, 3], ft_epochs=4)
    assert cfg.total_epochs(3) == 10 and cfg.ablated("s").total_epochs(3) == 4
    with pytest.raises(ValueError):
        cfg.epochs_for_stage(0, 2)
