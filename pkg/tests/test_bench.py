import numpy as np
import pytest
import torch

from sleepssl.bench import (CellResult, ResultsTable, SUPERVISED,
                            _round_half_up, export_embeddings, plan_scenario1,
                            plan_scenario2, plan_scenario3, run_scenario,
                            write_embeddings_csv)
from sleepssl.net import EpochEncoder
from sleepssl.sigproc import NormStats
from sleepssl.trainer import FinetuneConfig
from sleepssl.objectives import default_hyperparams

IDS_128 = [f"rec{i:03d}" for i in range(128)]


class TestRounding:
    def test_half_up(self):
        assert _round_half_up(1.5) == 2
        assert _round_half_up(2.5) == 3
        assert _round_half_up(2.49) == 2
        assert _round_half_up(0.5) == 1


class TestScenario1:
    def test_fold_sizes(self):
        plans = plan_scenario1(IDS_128, 1.0, n_reps=1, seed=0)
        assert len(plans) == 10
        sizes = sorted(len(p.test) for p in plans)
        assert set(sizes) == {12, 13}
        assert sum(sizes) == 128

    def test_folds_partition_ids(self):
        plans = plan_scenario1(IDS_128, 1.0, n_reps=1, seed=0)
        covered = sorted(rid for p in plans for rid in p.test)
        assert covered == sorted(IDS_128)

    def test_full_fraction_uses_whole_training_side(self):
        for plan in plan_scenario1(IDS_128, 1.0, n_reps=1, seed=3):
            assert sorted(plan.train + plan.val + plan.test) == sorted(IDS_128)
            # 85/15 of the remaining recordings, rounded half up
            assert len(plan.val) == _round_half_up(0.15 * (128 - len(plan.test)))

    def test_roles_disjoint(self):
        for plan in plan_scenario1(IDS_128, 0.3, n_reps=2, seed=1):
            roles = plan.train + plan.val + plan.test
            assert len(roles) == len(set(roles))

    def test_fraction_scales_labeled_count(self):
        plans = plan_scenario1(IDS_128, 0.1, n_reps=1, seed=0)
        for plan in plans:
            n_rest = 128 - len(plan.test)
            assert len(plan.train) + len(plan.val) == _round_half_up(0.1 * n_rest)

    def test_nesting_across_fractions(self):
        small = plan_scenario1(IDS_128, 0.1, n_reps=1, seed=5)
        large = plan_scenario1(IDS_128, 0.5, n_reps=1, seed=5)
        for p_small, p_large in zip(small, large):
            assert p_small.test == p_large.test
            assert set(p_small.train + p_small.val) <= set(p_large.train + p_large.val)

    def test_same_seed_identical(self):
        a = plan_scenario1(IDS_128, 0.2, n_reps=2, seed=9)
        b = plan_scenario1(IDS_128, 0.2, n_reps=2, seed=9)
        assert a == b
        c = plan_scenario1(IDS_128, 0.2, n_reps=2, seed=10)
        assert a != c

    def test_too_few_recordings(self):
        with pytest.raises(ValueError, match="at least"):
            plan_scenario1(IDS_128[:5], 1.0, n_reps=1, seed=0)

    def test_tiny_fraction_rejected(self):
        with pytest.raises(ValueError, match="minimum usable"):
            plan_scenario1(IDS_128, 0.001, n_reps=1, seed=0)


class TestScenario2:
    def test_constant_test_half(self):
        plans = plan_scenario2(IDS_128, 0.5, n_reps=2, m_reps=3, seed=0)
        assert len(plans) == 6
        by_rep = {}
        for p in plans:
            assert len(p.test) == 64
            by_rep.setdefault(p.rep_n, set()).add(tuple(p.test))
        # within a repetition all M draws share one test set
        for tests in by_rep.values():
            assert len(tests) == 1
        assert by_rep[0] != by_rep[1]

    def test_test_set_independent_of_fraction(self):
        a = plan_scenario2(IDS_128, 0.1, n_reps=1, m_reps=1, seed=7)
        b = plan_scenario2(IDS_128, 0.9, n_reps=1, m_reps=1, seed=7)
        assert a[0].test == b[0].test

    def test_labeled_draws_vary_with_m(self):
        plans = plan_scenario2(IDS_128, 0.3, n_reps=1, m_reps=3, seed=0)
        pools = {tuple(sorted(p.train + p.val)) for p in plans}
        assert len(pools) == 3

    def test_nesting_across_fractions(self):
        small = plan_scenario2(IDS_128, 0.1, n_reps=1, m_reps=2, seed=4)
        large = plan_scenario2(IDS_128, 0.4, n_reps=1, m_reps=2, seed=4)
        for p_s, p_l in zip(small, large):
            assert set(p_s.train + p_s.val) <= set(p_l.train + p_l.val)


class TestScenario3:
    def test_pool_sizes_128(self):
        plans = plan_scenario3(IDS_128, 0.925, n_reps=1, seed=0)
        for plan in plans:
            assert len(plan.unlabeled) == 118
            assert len(plan.train) + len(plan.val) + len(plan.test) == 10
        covered = sorted(rid for p in plans for rid in p.test)
        labeled_pool = sorted(set(IDS_128) - set(plans[0].unlabeled))
        assert covered == labeled_pool

    def test_even_split(self):
        plans = plan_scenario3(IDS_128, 0.5, n_reps=1, seed=0)
        assert len(plans[0].unlabeled) == 64
        assert len(plans[0].train) + len(plans[0].val) + len(plans[0].test) == 64

    def test_unlabeled_disjoint_from_labeled(self):
        for plan in plan_scenario3(IDS_128, 0.8, n_reps=2, seed=2):
            labeled = set(plan.train + plan.val + plan.test)
            assert not labeled & set(plan.unlabeled)

    def test_labeled_pool_too_small(self):
        with pytest.raises(ValueError, match="no 10-fold"):
            plan_scenario3(IDS_128, 0.99, n_reps=1, seed=0)

    def test_fraction_bounds(self):
        with pytest.raises(ValueError, match="unlabeled fraction"):
            plan_scenario3(IDS_128, 1.0, n_reps=1, seed=0)


class TestSeedStability:
    @pytest.mark.parametrize("seed", range(20))
    def test_all_scenarios_disjoint_and_stable(self, seed):
        for plans in (plan_scenario1(IDS_128, 0.5, 1, seed),
                      plan_scenario2(IDS_128, 0.5, 1, 1, seed),
                      plan_scenario3(IDS_128, 0.5, 1, seed)):
            for plan in plans:
                plan.check()


class TestAggregation:
    def test_mean_std_recomputed(self):
        cell = CellResult("simclr", 0.1, accuracies=[0.7, 0.8, 0.75])
        acc = np.array(cell.accuracies)
        assert abs(cell.mean - acc.mean()) < 1e-12
        assert abs(cell.std - acc.std()) < 1e-12
        assert cell.valid

    def test_errors_invalidate_cell(self):
        cell = CellResult("simclr", 0.1, accuracies=[0.7], errors=["boom"])
        assert not cell.valid

    def test_empty_cell_is_nan(self):
        cell = CellResult("byol", 0.5)
        assert np.isnan(cell.mean) and np.isnan(cell.std)
        assert not cell.valid

    def test_table_serialization(self):
        cell = CellResult("supervised", 1.0, accuracies=[0.9])
        table = ResultsTable(scenario=1, methods=["supervised"], fractions=[1.0],
                             cells={("supervised", 1.0): cell})
        data = table.to_dict()
        assert data["cells"][0]["mean"] == pytest.approx(0.9)


class TestRunScenario:
    def test_end_to_end_tiny(self, tiny_dataset, ds_net_config):
        ids = tiny_dataset.recording_ids
        plans = plan_scenario3(ids, 0.5, n_reps=1, seed=0, n_folds=2)[:1]
        hyper = default_hyperparams("maeeg")
        hyper.epochs, hyper.batch_size = 1, 4
        table = run_scenario(
            tiny_dataset, plans, [SUPERVISED, "maeeg"], ds_net_config,
            hyper_overrides={"maeeg": hyper},
            finetune_config=FinetuneConfig(epochs=1, batch_size=2),
            pretrain_steps_per_epoch=2, seed=0)
        for method in (SUPERVISED, "maeeg"):
            cell = table.cell(method, plans[0].label_fraction)
            assert cell.valid, cell.errors
            assert 0.0 <= cell.mean <= 1.0
        assert len(table.runs) == 2

    def test_missing_pretraining_pool_recorded(self, tiny_dataset, ds_net_config):
        ids = tiny_dataset.recording_ids
        plans = plan_scenario1(ids, 1.0, n_reps=1, seed=0, n_folds=2)[:1]
        table = run_scenario(tiny_dataset, plans, ["simclr"], ds_net_config,
                             finetune_config=FinetuneConfig(epochs=1, batch_size=2))
        cell = table.cell("simclr", 1.0)
        assert not cell.valid
        assert "no unlabeled pool" in cell.errors[0]

    def test_mixed_scenarios_rejected(self, tiny_dataset, ds_net_config):
        ids = tiny_dataset.recording_ids
        plans = (plan_scenario1(ids, 1.0, 1, 0, n_folds=2)[:1]
                 + plan_scenario3(ids, 0.5, 1, 0, n_folds=2)[:1])
        with pytest.raises(ValueError, match="one scenario"):
            run_scenario(tiny_dataset, plans, [SUPERVISED], ds_net_config)


class TestEmbeddings:
    def test_shape_labels_and_determinism(self, tiny_dataset, ds_net_config, tmp_path):
        torch.manual_seed(0)
        encoder = EpochEncoder(ds_net_config)
        stats = NormStats(mean=np.zeros(2), std=np.ones(2))
        rows = export_embeddings(encoder, tiny_dataset, stats, first_k=2)
        n_expected = sum(len(tiny_dataset.epoch_index(rid))
                         for rid in tiny_dataset.recording_ids[:2])
        assert len(rows) == n_expected
        assert all(len(r["features"]) == ds_net_config.feature_dim for r in rows)
        assert all(r["label"] in range(5) for r in rows)
        again = export_embeddings(encoder, tiny_dataset, stats, first_k=2)
        assert rows == again
        # labels line up with the hypnogram
        rid = tiny_dataset.recording_ids[0]
        index = dict(tiny_dataset.epoch_index(rid))
        for row in rows:
            r, pos = row["epoch_id"].split(":")
            if r == rid:
                assert row["label"] == index[int(pos)]

    def test_csv_writer(self, tmp_path):
        rows = [{"epoch_id": "a:0", "features": [0.5, 1.0], "label": 2}]
        path = tmp_path / "emb.csv"
        write_embeddings_csv(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch_id,f0,f1,label"
        assert lines[1] == "a:0,0.500000,1.000000,2"
        with pytest.raises(ValueError, match="no embedding"):
            write_embeddings_csv([], path)
