from dataclasses import replace

import numpy as np
import pytest

from torquefusion import encoding as enc
from torquefusion import harness as hn
from torquefusion.dynamics import TorqueSequence
from torquefusion.harness import ExperimentConfig, StageError, SyntheticCohortSpec


def small_spec(**kw):
    base = dict(n_subjects=8, sequences_per_subject=2, frames=16, appearance_noise=0.5, seed=3)
    base.update(kw)
    return SyntheticCohortSpec(**base)


def small_config(**kw):
    base = dict(epochs=3, embed_dim=8, batch_size=4, metrics=("top1", "rank1", "mAP"))
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def cohort():
    spec = small_spec()
    return hn.compute_torques(hn.generate_synthetic_cohort(spec), spec.chain), spec


class TestSyntheticCohort:
    def test_counts_and_balance(self):
        samples = hn.generate_synthetic_cohort(small_spec(n_subjects=4, sequences_per_subject=3))
        assert len(samples) == 12
        labels = [s.label for s in samples]
        assert labels.count(0) == labels.count(1) == 6
        assert len({s.subject for s in samples}) == 4

    def test_deterministic(self):
        a = hn.generate_synthetic_cohort(small_spec())
        b = hn.generate_synthetic_cohort(small_spec())
        for x, y in zip(a, b):
            assert x.id == y.id and x.label == y.label
            np.testing.assert_array_equal(x.motion.frames, y.motion.frames)
            np.testing.assert_array_equal(x.appearance, y.appearance)

    def test_noise_free_appearance_separable(self):
        samples = hn.generate_synthetic_cohort(small_spec(appearance_noise=0.0))
        X = np.stack([s.appearance.reshape(-1) for s in samples])
        y = np.array([s.label for s in samples])
        clf = hn._LinearClassifier(2).fit(X, y)
        assert np.all(clf.predict_proba(X).argmax(axis=1) == y)

    def test_classes_differ_in_torque_signature(self):
        sig = np.zeros((2, 6, 3))
        sig[..., 0], sig[..., 1] = 3.0, 1.0
        sig[1, 0, 0] = 6.0
        samples = hn.generate_synthetic_cohort(small_spec(signatures=sig, amplitude_jitter=0.0))
        amp = {lab: np.abs(np.concatenate([s.motion.frames[:, 0] for s in samples if s.label == lab])).max()
               for lab in (0, 1)}
        assert amp[1] > 1.5 * amp[0]

    @pytest.mark.parametrize("kw", [dict(n_classes=1), dict(frames=2), dict(appearance_noise=-1.0),
                                    dict(signatures=np.zeros((2, 3, 3)))])
    def test_invalid_spec(self, kw):
        with pytest.raises(ValueError, match="invalid spec"):
            hn.generate_synthetic_cohort(small_spec(**kw))

    def test_cohort_files_roundtrip(self, tmp_path):
        spec = small_spec(n_subjects=2)
        samples = hn.generate_synthetic_cohort(spec)
        hn.write_cohort(tmp_path, samples, spec.chain, spec)
        back, chain = hn.read_cohort(tmp_path)
        assert [s.id for s in back] == [s.id for s in samples]
        for x, y in zip(samples, back):
            np.testing.assert_array_equal(x.motion.frames, y.motion.frames)
            np.testing.assert_array_equal(x.appearance, y.appearance)
        assert chain.n_dof == spec.chain.n_dof


class TestRunExperiment:
    def test_degenerate_weights_match_baseline(self, cohort):
        rep = hn.run_experiment(small_config(decision_weights=(1.0, 0.0)), samples=cohort[0])
        for row in rep.rows:
            assert row.augmented == row.baseline and row.delta == 0.0

    def test_deterministic_report_files(self, cohort, tmp_path):
        for name in ("a.txt", "b.txt"):
            hn.run_experiment(small_config(output=str(tmp_path / name)), samples=cohort[0])
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()

    @pytest.mark.parametrize("op", ["add", "concat", "mul", "gated", "bmm", "tokens"])
    def test_feature_operators_run(self, cohort, op):
        rep = hn.run_experiment(small_config(fusion=op), samples=cohort[0])
        assert [r.metric for r in rep.rows] == ["top1", "rank1", "mAP"]
        assert all(0.0 <= r.augmented <= 100.0 for r in rep.rows)

    def test_matches_manual_composition(self, cohort):
        samples = cohort[0]
        cfg = small_config(metrics=("top1",))
        rep = hn.run_experiment(cfg, samples=samples)
        train = hn.split_subjects(samples, cfg.seed)
        norm = [enc.normalize_sequence(s.torques) for s in samples]
        labels = np.array([s.label for s in samples])
        idx = np.flatnonzero(train)
        fit = enc.fit_encoder([norm[i] for i in idx], labels[idx],
                              enc.EncoderConfig(cfg.epochs, cfg.step_size, cfg.batch_size, cfg.seed, cfg.embed_dim))
        app = np.stack([s.appearance.reshape(-1) for s in samples])
        p_app = hn._LinearClassifier(2).fit(app[train], labels[train]).predict_proba(app)
        fused = 0.5 * p_app + 0.5 * fit.predict_proba(norm)
        top1 = 100.0 * np.mean(fused[~train].argmax(axis=1) == labels[~train])
        assert rep.rows[0].augmented == top1

    def test_seed_sweep_adds_t_test(self, cohort):
        rep = hn.run_experiment(small_config(metrics=("top1",), seeds=(0, 1)), samples=cohort[0])
        assert len(rep.notes) == 1 and "p=" in rep.notes[0]

    def test_stage_attribution(self):
        with pytest.raises(StageError) as info:
            hn.run_experiment(small_config(cohort="/nonexistent/cohort"))
        assert info.value.stage == "ingest"

    def test_unknown_operator(self):
        with pytest.raises(ValueError, match="unknown fusion operator"):
            hn.run_experiment(small_config(fusion="attention"), samples=[])

    def test_config_file(self, tmp_path):
        (tmp_path / "cfg.json").write_text('{"cohort": "data", "fusion": "add", "metrics": ["top1"]}')
        cfg = ExperimentConfig.from_file(tmp_path / "cfg.json")
        assert cfg.cohort == str(tmp_path / "data") and cfg.metrics == ("top1",)
        (tmp_path / "bad.json").write_text('{"colour": 1}')
        with pytest.raises(ValueError, match="unknown config keys"):
            ExperimentConfig.from_file(tmp_path / "bad.json")


@pytest.fixture(scope="module")
def experiment(cohort):
    return hn.Experiment(cohort[0], small_config(metrics=("top1",))).fit()


class TestAblation:
    def test_empty_mask_is_zero(self, experiment):
        res = hn.ablate_joints(experiment.config, [()], experiment=experiment)
        assert res.rows[0].delta == 0.0

    def test_zero_torque_joint(self, cohort):
        samples = []
        for s in cohort[0]:
            tau = s.torques.tau.copy()
            tau[:, 3] = 0.0
            samples.append(replace(s, torques=TorqueSequence(tau, s.torques.joint_ids)))
        res = hn.ablate_joints(small_config(metrics=("top1",)), [3], samples=samples)
        assert res.rows[0].delta == 0.0

    def test_total_mask_equals_zero_torque(self, experiment):
        masked = experiment._force_embeddings(tuple(experiment.joint_ids))
        zero = experiment.encoder.embed(np.zeros_like(experiment.norm[0].tau))
        for row in masked:
            np.testing.assert_array_equal(row, zero)

    def test_table(self, experiment):
        res = hn.ablate_joints(experiment.config, [0, (1, 2)], experiment=experiment)
        text = res.format_table()
        assert text.splitlines()[1] == "joints value delta"
        assert text.splitlines()[3].startswith("1+2 ")
