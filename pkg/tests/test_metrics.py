import numpy as np
import pytest

from llnn.metrics import (
    CSV_HEADER,
    EpochRecord,
    RunLog,
    aggregate_runs,
    auc,
    export_csv,
    predict_task,
)
from llnn.network import TransferDecision, add_task, new_network


def brute_force_auc(scores, labels):
    """Independent O(n^2) pairwise oracle."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


class TestAuc:
    def test_perfect_separation(self):
        assert auc([0.9, 0.1], [1, 0]) == 1.0

    def test_all_ties(self):
        assert auc([0.4, 0.4, 0.4, 0.4], [1, 0, 1, 0]) == 0.5

    def test_two_pair_case(self):
        # brute force over the 2 pos-neg pairs: (0.9 > 0.8) + (0.3 < 0.8) -> 0.5
        scores, labels = [0.9, 0.8, 0.3], [1, 0, 1]
        assert brute_force_auc(scores, labels) == 0.5
        assert auc(scores, labels) == 0.5

    def test_matches_brute_force_on_random_data(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            n = int(rng.integers(2, 40))
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            scores = np.round(rng.random(n), 2)  # coarse grid forces ties
            assert auc(scores, labels) == brute_force_auc(list(scores), list(labels))

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(1)
        scores = rng.random(30)
        labels = rng.integers(0, 2, 30)
        labels[0], labels[1] = 0, 1
        assert auc(scores, labels) == auc(np.exp(3 * scores), labels)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="positive and.*negative"):
            auc([0.1, 0.2], [1, 1])


class TestPredictTask:
    @pytest.fixture()
    def net(self):
        net = new_network(4, 0)
        for k in range(3):
            add_task(net, 2, TransferDecision(frozenset(), None))
        for t, head in enumerate(net.heads):
            head.block.values[:] = 0.0
            head.block.values[0, -1] = [0.3, 0.9, 0.2][t] * 2 - 1
        return net

    def test_argmax(self, net):
        # biases chosen so head probabilities order as 1 > 0 > 2
        assert predict_task(net, np.zeros(4)) == 1

    def test_tie_breaks_low(self):
        net = new_network(4, 0)
        add_task(net, 2, TransferDecision(frozenset(), None))
        add_task(net, 2, TransferDecision(frozenset(), None))
        for head in net.heads:
            head.block.values[:] = 0.0
        assert predict_task(net, np.ones(4)) == 0

    def test_empty_network_rejected(self):
        with pytest.raises(ValueError, match="no tasks"):
            predict_task(new_network(4, 0), np.zeros(4))

    def test_batch(self, net):
        preds = predict_task(net, np.zeros((5, 4)))
        assert list(preds) == [1] * 5

    def test_invariant_under_sample_permutation(self, net):
        x = np.random.default_rng(6).random((7, 4))
        perm = np.random.default_rng(7).permutation(7)
        preds = predict_task(net, x)
        assert list(predict_task(net, x[perm])) == list(preds[perm])


class TestExportCsv:
    def make_log(self):
        log = RunLog(seed=3)
        rec = EpochRecord(phase="learn:T0", epoch=1)
        rec.per_task_auc = {0: 0.987654321}
        rec.per_task_loss = {0: 0.1234567}
        log.add(rec)
        log.add_confusion("confusion:init", 0, 1, 0.25)
        return log

    def test_header_only_when_empty(self, tmp_path):
        path = tmp_path / "empty.csv"
        export_csv(RunLog(seed=0), path)
        assert path.read_text() == CSV_HEADER + "\n"

    def test_one_record_two_value_lines(self, tmp_path):
        log = RunLog(seed=1)
        rec = EpochRecord(phase="p", epoch=1)
        rec.per_task_auc = {0: 0.5}
        log.add(rec)
        path = tmp_path / "one.csv"
        export_csv(log, path)
        assert path.read_text() == CSV_HEADER + "\n1,p,1,0,auc,0.500000\n"

    def test_byte_determinism(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        export_csv(self.make_log(), a)
        export_csv(self.make_log(), b)
        assert a.read_bytes() == b.read_bytes()

    def test_fixed_decimals(self, tmp_path):
        path = tmp_path / "log.csv"
        export_csv(self.make_log(), path)
        lines = path.read_text().splitlines()
        assert "3,learn:T0,1,0,auc,0.987654" in lines
        assert "3,learn:T0,1,0,loss,0.123457" in lines
        assert "3,confusion:init,0,1,confusion,0.250000" in lines

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(OSError, match="cannot write"):
            export_csv(self.make_log(), tmp_path / "nope" / "log.csv")


class TestAggregate:
    def test_mean_and_std_over_seeds(self):
        logs = []
        for seed, value in [(0, 0.8), (1, 0.6)]:
            log = RunLog(seed=seed)
            rec = EpochRecord(phase="p", epoch=1)
            rec.per_task_auc = {0: value}
            log.add(rec)
            logs.append(log)
        agg = aggregate_runs("e1", logs)
        assert agg["n_seeds"] == 2
        entry = agg["series"][0]
        assert entry["mean"] == pytest.approx(0.7)
        assert entry["stddev"] == pytest.approx(0.1)

    def test_order_independent(self):
        def log_with(seed, value):
            log = RunLog(seed=seed)
            rec = EpochRecord(phase="p", epoch=1)
            rec.per_task_auc = {0: value}
            log.add(rec)
            return log

        a = aggregate_runs("e", [log_with(0, 0.1), log_with(1, 0.9)])
        b = aggregate_runs("e", [log_with(1, 0.9), log_with(0, 0.1)])
        assert a == b
