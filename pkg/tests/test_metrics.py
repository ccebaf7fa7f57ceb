"""Detection tallies, accuracy evaluation, calibration, and sweeps."""

from __future__ import annotations

import numpy as np
import pytest

from streamlda.engine import (
    ClassRegistry,
    Mutation,
    StreamOutcome,
    restore,
    run_stream,
    snapshot,
)
from streamlda.gaussian import (
    BackgroundModel,
    ClassPrototype,
    ClassState,
    SharedGaussianModel,
    fit_initial,
)
from streamlda.metrics import (
    DetectionTally,
    build_report,
    calibrate_threshold,
    evaluate_accuracy,
    promotion_threshold_sweep,
    tally,
)
from streamlda.scoring import Decision, Reason, ScoreKind, ScoreMethod, Verdict
from streamlda.streams import (
    LabeledEmbeddingSet,
    SplitSpec,
    build_calibration_stream,
    build_class_incremental_stream,
    build_random_stream,
    make_rng,
    split,
    synth_generate,
)


def outcome(verdict: Verdict, gt_ood: bool, mutation=Mutation.NONE, label=None, index=0):
    reason = Reason.BELOW_THRESHOLD if verdict is Verdict.OOD else Reason.ABOVE_THRESHOLD
    return StreamOutcome(
        index=index,
        decision=Decision(verdict, 0, 1.0, reason),
        asked=verdict is Verdict.OOD,
        oracle_label=label,
        mutation=mutation,
        ground_truth_ood=gt_ood,
    )


class TestTally:
    def test_all_correct(self):
        outcomes = [outcome(Verdict.OOD, True)] * 5 + [outcome(Verdict.ID, False)] * 7
        t = tally(outcomes)
        assert (t.tp, t.fp, t.fn, t.tn) == (5, 0, 0, 7)
        assert t.f_score == 1.0

    def test_arithmetic_example(self):
        outcomes = (
            [outcome(Verdict.OOD, True)] * 8
            + [outcome(Verdict.OOD, False)] * 2
            + [outcome(Verdict.ID, True)] * 2
        )
        t = tally(outcomes)
        assert t.precision == pytest.approx(0.8)
        assert t.recall == pytest.approx(0.8)
        assert t.f_score == pytest.approx(0.8)

    def test_degenerate_case_is_zero_with_flag(self):
        t = tally([outcome(Verdict.ID, False)] * 4)
        assert t.f_score == 0.0
        assert t.degenerate
        assert t.total == 4

    def test_order_invariance(self):
        rng = make_rng(1)
        outcomes = [
            outcome(Verdict.OOD if rng.random() < 0.5 else Verdict.ID, bool(rng.random() < 0.5))
            for _ in range(100)
        ]
        t1 = tally(outcomes)
        shuffled = [outcomes[i] for i in rng.permutation(100)]
        assert tally(shuffled) == t1

    def test_counts_cover_every_sample(self):
        rng = make_rng(2)
        outcomes = [
            outcome(Verdict.OOD if rng.random() < 0.3 else Verdict.ID, bool(rng.random() < 0.4))
            for _ in range(250)
        ]
        assert tally(outcomes).total == 250

    def test_bounds(self):
        rng = make_rng(3)
        for _ in range(20):
            t = DetectionTally(*rng.integers(0, 50, size=4).tolist())
            assert 0.0 <= t.f_score <= 1.0


def single_class_registry():
    model = SharedGaussianModel(np.eye(2), ridge=0.0)
    background = BackgroundModel(np.zeros(2), model)
    protos = [ClassPrototype(3, np.zeros(2), 5, ClassState.INITIAL)]
    return ClassRegistry(model, background, protos, th=30)


class TestEvaluateAccuracy:
    def test_single_class_registry_scores_class_fraction(self):
        registry = single_class_registry()
        vectors = np.zeros((10, 2))
        labels = np.array([3] * 4 + [9] * 6)
        acc = evaluate_accuracy(registry, LabeledEmbeddingSet(vectors, labels))
        assert acc.total == pytest.approx(0.4)
        assert acc.id_accuracy == 1.0
        assert acc.ood_accuracy == 0.0  # no prototype for class 9 exists

    def test_never_seen_class_counts_as_error(self):
        registry = single_class_registry()
        test = LabeledEmbeddingSet(np.zeros((3, 2)), np.array([99, 99, 99]))
        acc = evaluate_accuracy(registry, test)
        assert acc.total == 0.0
        assert acc.n_ood == 3

    def test_decomposition_is_exact(self):
        ds = synth_generate(8, 6, 60, spread=15.0, seed=70)
        sp = split(ds, SplitSpec(seed=71, app_per_class=15, train_per_class=30))
        protos, model, background = fit_initial(sp.id_train.vectors, sp.id_train.labels)
        registry = ClassRegistry(model, background, protos, th=5)
        stream = build_random_stream(sp, seed=72)
        run_stream(registry, stream.items(), stream.oracle(), ScoreMethod.md(0.2))
        acc = evaluate_accuracy(registry, sp.test)
        assert acc.correct_total == acc.id_correct + acc.ood_correct
        assert acc.n_total == acc.n_id + acc.n_ood
        assert acc.total == (acc.id_correct + acc.ood_correct) / acc.n_total

    def test_perfectly_learned_initial_classes(self):
        ds = synth_generate(8, 8, 80, spread=40.0, seed=73)
        sp = split(ds, SplitSpec(seed=74, app_per_class=10, train_per_class=50))
        protos, model, background = fit_initial(sp.id_train.vectors, sp.id_train.labels)
        registry = ClassRegistry(model, background, protos, th=5)
        id_only = sp.test.restricted_to(sp.id_classes)
        acc = evaluate_accuracy(registry, id_only)
        assert acc.id_accuracy >= 0.99
        assert acc.n_ood == 0

    def test_dimension_and_empty_guards(self):
        registry = single_class_registry()
        with pytest.raises(ValueError, match="empty"):
            evaluate_accuracy(registry, LabeledEmbeddingSet(np.zeros((0, 2)), np.zeros(0, dtype=int)))
        with pytest.raises(ValueError, match="dimension"):
            evaluate_accuracy(registry, LabeledEmbeddingSet(np.zeros((2, 3)), np.array([0, 1])))


class TestBuildReport:
    def make_run(self, setup="random"):
        ds = synth_generate(8, 6, 60, spread=15.0, seed=80)
        sp = split(ds, SplitSpec(seed=81, app_per_class=15, train_per_class=30))
        protos, model, background = fit_initial(sp.id_train.vectors, sp.id_train.labels)
        registry = ClassRegistry(model, background, protos, th=5)
        if setup == "random":
            stream = build_random_stream(sp, seed=82)
        else:
            stream = build_class_incremental_stream(sp, tasks=2, seed=82)
        outcomes = run_stream(registry, stream.items(), stream.oracle(), ScoreMethod.md(0.2))
        return sp, registry, stream, outcomes

    def test_ask_bookkeeping(self):
        sp, registry, stream, outcomes = self.make_run()
        report = build_report(outcomes, registry, test=sp.test, manifest=stream.manifest())
        assert report.asks == sum(1 for o in outcomes if o.asked)
        assert report.asks_yielding_new == sum(
            1 for o in outcomes if o.mutation is not Mutation.NONE
        )
        assert report.asks >= report.asks_yielding_new
        assert report.n_samples == len(outcomes)
        assert report.total_accuracy is not None
        assert report.manifest["setup"] == "random"

    def test_task_checkpoints(self):
        sp, registry, stream, outcomes = self.make_run(setup="class-incremental")
        report = build_report(
            outcomes, registry, test=sp.test, task_boundaries=stream.task_boundaries
        )
        assert len(report.task_checkpoints) == 2
        assert report.task_checkpoints[-1].end == len(outcomes)
        assert report.task_checkpoints[0].asks <= report.task_checkpoints[1].asks
        assert report.task_checkpoints[-1].asks == report.asks

    def test_accuracy_optional(self):
        _, registry, _, outcomes = self.make_run()
        report = build_report(outcomes, registry)
        assert report.total_accuracy is None
        assert report.f_score >= 0.0


class TestCalibration:
    def test_calibrated_threshold_beats_extremes(self):
        ds = synth_generate(10, 8, 80, spread=12.0, seed=90)
        sp = split(ds, SplitSpec(seed=91, app_per_class=15, train_per_class=40, cal_per_class=15))
        protos, model, background = fit_initial(sp.id_train.vectors, sp.id_train.labels)
        snap = snapshot(ClassRegistry(model, background, protos, th=5))
        cal = build_calibration_stream(sp, seed=92)
        best, rows = calibrate_threshold(snap, cal, cal.oracle(), ScoreKind.MD, n_candidates=11)
        best_row = max(rows, key=lambda r: r.f_score)
        assert best_row.threshold == best or best_row.f_score == pytest.approx(
            next(r.f_score for r in rows if r.threshold == best)
        )
        # the chosen cutoff generalizes to the real stream reasonably
        stream = build_random_stream(sp, seed=93)
        registry = restore(snap)
        outcomes = run_stream(registry, stream.items(), stream.oracle(), ScoreMethod.md(best))
        assert tally(outcomes).f_score > 0.6

    def test_explicit_candidates_respected(self):
        ds = synth_generate(6, 4, 40, spread=12.0, seed=94)
        sp = split(ds, SplitSpec(seed=95, app_per_class=10, train_per_class=20, cal_per_class=5))
        protos, model, background = fit_initial(sp.id_train.vectors, sp.id_train.labels)
        snap = snapshot(ClassRegistry(model, background, protos, th=5))
        cal = build_calibration_stream(sp, seed=96)
        grid = [0.05, 0.1, 0.2]
        best, rows = calibrate_threshold(snap, cal, cal.oracle(), ScoreKind.MD, candidates=grid)
        assert [r.threshold for r in rows] == grid
        assert best in grid


class TestSweep:
    def test_rows_follow_requested_thresholds(self):
        ds = synth_generate(8, 6, 60, spread=15.0, seed=97)
        sp = split(ds, SplitSpec(seed=98, app_per_class=15, train_per_class=30))
        protos, model, background = fit_initial(sp.id_train.vectors, sp.id_train.labels)
        snap = snapshot(ClassRegistry(model, background, protos, th=5))
        stream = build_random_stream(sp, seed=99)
        rows = promotion_threshold_sweep(
            snap, stream, stream.oracle(), ScoreMethod.md(0.2), sp.test, th_values=(2, 6)
        )
        assert [r.th for r in rows] == [2, 6]
        assert rows[0].asks <= rows[1].asks
        for r in rows:
            assert 0.0 <= r.f_score <= 1.0
            assert 0.0 <= r.total_accuracy <= 1.0
