import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gendisc import autodiff as ad
from gendisc.autodiff import NumericalError, Parameter
from gendisc.models import IndependentGenerativeModel, SharedGenerativeModel, params_digest
from gendisc.registry import build_model
from gendisc.config import load_settings
from gendisc.text import Dataset, EOS
from gendisc.training import (OptimizerConfig, TrainReport, TrainingDiverged, accuracy,
                              adagrad_update, clip_gradients, fit_independent, fit_new_class,
                              nll_per_token, pretrain_shared_lm, select_learning_rate, train)


class TestAdagrad:
    def test_first_step_is_sign(self):
        p = Parameter("p", np.zeros(3))
        p.grad[...] = [2.0, -0.3, 5e-4]
        adagrad_update(p, 0.1, 1e-8)
        assert np.allclose(p.value, [-0.1, 0.1, -0.1], atol=1e-5)
        assert not p.grad.any()

    def test_zero_grad_changes_nothing(self):
        p = Parameter("p", np.array([1.0, 2.0]))
        p.accum[...] = [0.5, 0.0]
        adagrad_update(p, 0.5)
        assert p.value.tolist() == [1.0, 2.0] and p.accum.tolist() == [0.5, 0.0]

    def test_three_step_trace(self):
        p = Parameter("p", np.array([1.0]))
        lr, eps = 0.2, 1e-8
        theta, acc = 1.0, 0.0
        for g in (0.5, -1.0, 2.0):
            p.grad[0] = g
            adagrad_update(p, lr, eps)
            acc += g * g
            theta -= lr * g / (math.sqrt(acc) + eps)
        assert p.value[0] == pytest.approx(theta, abs=1e-15)
        assert p.accum[0] == pytest.approx(5.25)

    def test_non_finite_grad(self):
        p = Parameter("p", np.zeros(2))
        p.grad[0] = np.nan
        with pytest.raises(NumericalError, match="p"):
            adagrad_update(p, 0.1)

    @given(st.lists(st.one_of(st.just(0.0), st.floats(1e-100, 1e3), st.floats(-1e3, -1e-100)),
                    min_size=1, max_size=20))
    def test_accumulator_monotone_and_step_bounded(self, grads):
        p = Parameter("p", np.zeros(1))
        prev_acc, prev_val = 0.0, 0.0
        for g in grads:
            p.grad[0] = g
            adagrad_update(p, 0.1, eps=1e-12)
            assert p.accum[0] >= prev_acc
            assert abs(p.value[0] - prev_val) <= 0.1 * (1 + 1e-12)
            prev_acc, prev_val = p.accum[0], p.value[0]


def test_clip_gradients():
    a, b = Parameter("a", np.zeros(2)), Parameter("b", np.zeros(1))
    a.grad[...] = [3.0, 0.0]
    b.grad[...] = [4.0]
    assert clip_gradients([a, b], 5.0) == pytest.approx(5.0)
    assert a.grad.tolist() == [3.0, 0.0]
    clip_gradients([a, b], 1.0)
    assert np.sqrt(a.grad @ a.grad + b.grad @ b.grad) == pytest.approx(1.0)
    clip_gradients([a, b], float("inf"))
    assert np.sqrt(a.grad @ a.grad + b.grad @ b.grad) == pytest.approx(1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(lr=0)
    with pytest.raises(ValueError):
        OptimizerConfig(patience=0)


class ScriptedModel:
    """Dev accuracy follows a script; loss is linear in one parameter."""

    def __init__(self, script):
        self.p = Parameter("p", np.zeros(1))
        self.script = list(script)
        self.seen = []

    def parameters(self):
        return [self.p]

    def loss(self, tape, doc, y):
        return ad.total(tape.param(self.p))

    def predict(self, doc):
        self.seen.append(float(self.p.value[0]))
        right = self.script[len(self.seen) - 1]
        return 0 if right else 1


def one_doc(label=0):
    return Dataset([np.array([3, EOS])], [label], 2)


class TestTrain:
    def test_patience_one_stops_after_first_drop(self):
        m = ScriptedModel([1, 0, 0, 0])
        report = train(m, one_doc(), one_doc(), OptimizerConfig(lr=0.1, patience=1, max_epochs=10))
        assert [r["epoch"] for r in report.epochs] == [1, 2]
        assert report.best_epoch == 1 and report.best_dev_accuracy == 100.0
        assert m.p.value[0] == m.seen[0]

    def test_best_is_max_over_epochs(self):
        m = ScriptedModel([0, 1, 0, 1, 1, 0, 0, 0, 0])
        report = train(m, one_doc(), one_doc(), OptimizerConfig(lr=0.1, patience=3, max_epochs=9))
        accs = [r["dev_accuracy"] for r in report.epochs]
        assert report.best_dev_accuracy == max(accs)
        assert report.best_epoch == 2
        assert len(accs) == 5
        assert m.p.value[0] == m.seen[1]

    def test_empty_dev(self):
        with pytest.raises(ValueError):
            train(ScriptedModel([1]), one_doc(), one_doc().subset([]), OptimizerConfig())

    def test_divergence_aborts_with_report(self):
        class Exploding(ScriptedModel):
            def loss(self, tape, doc, y):
                return tape.constant(np.inf)

        with pytest.raises(TrainingDiverged) as info:
            train(Exploding([1] * 5), one_doc(), one_doc(), OptimizerConfig(max_epochs=3))
        assert isinstance(info.value.report, TrainReport)

    def test_disc_on_fixture_reaches_full_dev_accuracy(self, f1):
        train_ds, dev, _, vocab = f1
        s = load_settings("fixture")
        m = build_model("disc", len(vocab), 2, s)
        report = train(m, train_ds, dev, s.optimizer(max_epochs=50))
        assert report.best_dev_accuracy == 100.0
        assert accuracy(m, dev) == 100.0

    def test_deterministic_report(self, f1):
        train_ds, dev, _, vocab = f1
        s = load_settings("fixture")
        reports = []
        for _ in range(2):
            m = build_model("gen-shared", len(vocab), 2, s)
            reports.append((train(m, train_ds, dev, s.optimizer(max_epochs=4, patience=10)),
                            params_digest(m.parameters())))
        assert reports[0][0] == reports[1][0]
        assert reports[0][1] == reports[1][1]
        assert reports[0][0].to_ndjson() == reports[1][0].to_ndjson()
        for line in reports[0][0].to_ndjson().splitlines():
            assert set(json.loads(line)) == {"epoch", "train_loss", "dev_accuracy"}


def test_select_learning_rate_prefers_earlier_on_ties():
    def fit(lr):
        return lr, TrainReport(best_dev_accuracy=50.0 if lr != 0.05 else 60.0, lr=lr)

    assert select_learning_rate(fit, [0.5, 0.1, 0.05, 0.01])[0] == 0.05
    assert select_learning_rate(fit, [0.5, 0.1])[0] == 0.5


class TestContinualProcedures:
    cfg = OptimizerConfig(lr=0.1, batch_size=4, max_epochs=30, patience=5, seed=0)

    def pretrained(self, f1, **kw):
        train_ds = f1[0]
        return pretrain_shared_lm(list(train_ds.docs), 7, 2, self.cfg, dim=8, hidden=8, **kw)

    def test_pretraining_vector_and_untouched_class_parts(self, f1):
        model, _ = self.pretrained(f1)
        assert np.linalg.norm(model.pretrain_vector) <= 1.0
        assert not model.class_bias.value.any()
        fresh = SharedGenerativeModel(7, 2, 8, 8, seed=0)
        assert np.array_equal(model.class_emb.value, fresh.class_emb.value)
        assert np.all(np.isneginf(model.log_prior))

    def test_heldout_perplexity_drops_over_first_epochs(self, f1):
        train_ds, dev, test, _ = f1
        held = list(dev.docs) + list(test.docs)
        losses = []
        for epochs in (1, 2, 3):
            cfg = OptimizerConfig(lr=0.1, batch_size=4, max_epochs=epochs, seed=0)
            model, _ = pretrain_shared_lm(list(train_ds.docs), 7, 2, cfg, dim=8, hidden=8,
                                          dev_docs=[train_ds.docs[0]])
            losses.append(nll_per_token(model.pretrain_nll, held))
        assert losses[0] > losses[1] > losses[2]

    def test_fit_new_class_freezes_shared_parts(self, f1):
        model, _ = self.pretrained(f1)
        before = params_digest(model.shared_parameters())
        docs0 = [d for d, y in zip(f1[0].docs, f1[0].labels) if y == 0]
        fit_new_class(model, docs0, 0, self.cfg)
        assert params_digest(model.shared_parameters()) == before
        assert model.log_prior[0] == 0.0 and np.isneginf(model.log_prior[1])

    def test_class_order_does_not_matter(self, f1):
        docs = {y: [d for d, lab in zip(f1[0].docs, f1[0].labels) if lab == y] for y in (0, 1)}
        results = []
        for order in ((0, 1), (1, 0)):
            model, _ = self.pretrained(f1)
            out = {y: fit_new_class(model, docs[y], y, self.cfg)[:2] for y in order}
            results.append(out)
        for y in (0, 1):
            assert np.array_equal(results[0][y][0], results[1][y][0])
            assert np.array_equal(results[0][y][1], results[1][y][1])

    def test_sequential_matches_joint_on_fixture(self, f1):
        train_ds, dev, test, _ = f1
        model, _ = self.pretrained(f1)
        for y in (0, 1):
            fit_new_class(model, [d for d, lab in zip(train_ds.docs, train_ds.labels) if lab == y],
                          y, self.cfg)
        joint = SharedGenerativeModel(7, 2, 8, 8, seed=0)
        train(joint, train_ds, dev, self.cfg)
        assert abs(accuracy(model, test) - accuracy(joint, test)) <= 5.0

    def test_empty_class(self, f1):
        model, _ = self.pretrained(f1)
        with pytest.raises(ValueError):
            fit_new_class(model, [], 0, self.cfg)


def test_independent_parallel_equals_sequential(f1):
    train_ds, dev, _, _ = f1
    cfg = OptimizerConfig(lr=0.1, batch_size=4, max_epochs=3, seed=2)
    digests = []
    for workers in (1, 2):
        m = IndependentGenerativeModel(7, 2, 4, 4, seed=2)
        fit_independent(m, train_ds, dev, cfg, workers=workers)
        digests.append(params_digest(m.parameters()))
    assert digests[0] == digests[1]
