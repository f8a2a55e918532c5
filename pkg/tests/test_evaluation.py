import numpy as np
import pytest

from traceaug.evaluation import (
    OpenWorldOutcome,
    closed_world_accuracy,
    format_pr_records,
    open_world_eval,
    pr_curve,
)


def brute_force(preds, is_monitored, labels, threshold, n_mon, class_correct=False):
    """Independent per-trace enumeration of the thresholding rule."""
    tp = fp = fn = tn = 0
    for row, monitored, label in zip(preds, is_monitored, labels):
        top = max(range(len(row)), key=lambda k: (row[k], -k))
        positive = top < n_mon and row[top] > threshold
        if class_correct:
            positive = positive and top == label
        if monitored:
            tp += positive
            fn += not positive
        else:
            flagged = max(range(len(row)), key=lambda k: (row[k], -k)) < n_mon and max(row) > threshold
            fp += flagged
            tn += not flagged
    return tp, fp, fn, tn


def random_instance(rng):
    n = int(rng.integers(1, 9))
    classes = int(rng.integers(2, 5))
    preds = rng.dirichlet(np.ones(classes), size=n)
    is_monitored = rng.random(n) < 0.5
    labels = rng.integers(0, classes, size=n)
    return preds, is_monitored, labels, classes


class TestClosedWorld:
    def test_all_correct(self):
        preds = np.eye(3)
        assert closed_world_accuracy(preds, [0, 1, 2]) == 1.0

    def test_none_correct(self):
        preds = np.eye(3)
        assert closed_world_accuracy(preds, [1, 2, 0]) == 0.0

    def test_three_of_four(self):
        preds = np.array([[0.9, 0.1], [0.8, 0.2], [0.3, 0.7], [0.6, 0.4]])
        assert closed_world_accuracy(preds, [0, 0, 1, 1]) == 0.75

    def test_tie_breaks_to_lowest_index(self):
        preds = np.array([[0.5, 0.5]])
        assert closed_world_accuracy(preds, [0]) == 1.0
        assert closed_world_accuracy(preds, [1]) == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            closed_world_accuracy(np.empty((0, 3)), [])


class TestOpenWorld:
    def test_threshold_one_nothing_flagged(self):
        preds = np.array([[1.0, 0.0], [0.2, 0.8]])
        out = open_world_eval(preds, [True, False], [0, 0], threshold=1.0)
        assert (out.tp, out.fp) == (0, 0)
        assert out.precision == 0.0 and out.recall == 0.0 and out.f1 == 0.0

    def test_threshold_zero_everything_flagged(self):
        preds = np.array([[0.9, 0.1], [0.2, 0.8]])
        out = open_world_eval(preds, [True, True], [0, 1], threshold=0.0)
        assert out.recall == 1.0

    def test_four_trace_toy_matches_enumeration(self):
        preds = np.array(
            [[0.7, 0.2, 0.1], [0.4, 0.35, 0.25], [0.9, 0.05, 0.05], [0.1, 0.3, 0.6]]
        )
        is_monitored = [True, True, False, False]
        labels = [0, 1, 0, 0]
        for threshold in (0.0, 0.39, 0.5, 0.69, 0.9):
            out = open_world_eval(preds, is_monitored, labels, threshold)
            expected = brute_force(preds, is_monitored, labels, threshold, n_mon=3)
            assert (out.tp, out.fp, out.fn, out.tn) == expected

    def test_random_instances_match_enumeration(self):
        rng = np.random.default_rng(21)
        for _ in range(200):
            preds, is_monitored, labels, classes = random_instance(rng)
            threshold = float(rng.random())
            out = open_world_eval(preds, is_monitored, labels, threshold)
            assert (out.tp, out.fp, out.fn, out.tn) == brute_force(
                preds, is_monitored, labels, threshold, classes
            )

    def test_background_class_excluded_from_monitored(self):
        # last column is the unmonitored class; max prob there never flags
        preds = np.array([[0.1, 0.2, 0.7], [0.5, 0.3, 0.2]])
        out = open_world_eval(preds, [True, True], [0, 0], 0.05, n_monitored_classes=2)
        assert out.tp == 1 and out.fn == 1

    def test_class_correct_mode_stricter(self):
        preds = np.array([[0.9, 0.1]])
        loose = open_world_eval(preds, [True], [1], 0.5)
        strict = open_world_eval(preds, [True], [1], 0.5, class_correct=True)
        assert loose.tp == 1 and strict.tp == 0 and strict.fn == 1

    def test_counts_partition_population(self):
        rng = np.random.default_rng(22)
        preds, is_monitored, labels, _ = random_instance(rng)
        out = open_world_eval(preds, is_monitored, labels, 0.4)
        assert out.tp + out.fn == int(np.sum(is_monitored))
        assert out.fp + out.tn == int(np.sum(~np.asarray(is_monitored)))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(23)
        preds, is_monitored, labels, _ = random_instance(rng)
        perm = rng.permutation(len(preds))
        a = open_world_eval(preds, is_monitored, labels, 0.3)
        b = open_world_eval(preds[perm], np.asarray(is_monitored)[perm], labels[perm], 0.3)
        assert (a.tp, a.fp, a.fn, a.tn) == (b.tp, b.fp, b.fn, b.tn)

    def test_misaligned_rejected(self):
        with pytest.raises(ValueError):
            open_world_eval(np.eye(2), [True], [0, 1], 0.5)


class TestPrCurve:
    def test_singleton_matches_pointwise(self):
        rng = np.random.default_rng(24)
        preds, is_monitored, labels, _ = random_instance(rng)
        curve = pr_curve(preds, is_monitored, labels, [0.4])
        assert curve[0] == open_world_eval(preds, is_monitored, labels, 0.4)

    def test_endpoints(self):
        preds = np.array([[0.9, 0.1], [0.6, 0.4]])
        curve = pr_curve(preds, [True, True], [0, 0], [0.0, 1.0])
        assert curve[0].recall == 1.0 and curve[-1].recall == 0.0

    def test_pointwise_oracle_and_recall_monotone(self):
        rng = np.random.default_rng(25)
        preds, is_monitored, labels, _ = random_instance(rng)
        thresholds = np.linspace(0, 1, 50)
        curve = pr_curve(preds, is_monitored, labels, thresholds)
        recalls = [o.recall for o in curve]
        assert all(b <= a for a, b in zip(recalls, recalls[1:]))
        for t, o in zip(thresholds, curve):
            assert o == open_world_eval(preds, is_monitored, labels, float(t))

    def test_unsorted_rejected(self):
        with pytest.raises(ValueError):
            pr_curve(np.eye(2), [True, False], [0, 1], [0.5, 0.1])

    def test_record_format(self):
        out = OpenWorldOutcome(tp=1, fp=1, fn=0, tn=2, threshold=0.25)
        line = format_pr_records([out])
        assert line == "0.25 0.5 1.0 0.6666666666666666\n"
