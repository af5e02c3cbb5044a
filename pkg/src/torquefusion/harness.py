"""Synthetic cohorts, the encode -> fuse -> evaluate pipeline and joint ablation.

A cohort is a list of :class:`Sample` records, each holding a torque
sequence (or the motion it is computed from), an appearance feature map, a
class label and a subject id. :class:`Experiment` splits subjects into
train and test halves, trains the force encoder and the classifiers on the
train half, and reports baseline (appearance only) versus force-augmented
metrics on the test half.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import dynamics, encoding, evaluation, fusion
from . import io as tio

log = logging.getLogger(__name__)

RETRIEVAL_METRICS = ("rank1", "rank5", "rank10", "mAP", "mINP")
METRICS = ("top1",) + RETRIEVAL_METRICS


class StageError(RuntimeError):
    """Pipeline failure tagged with the stage that raised it."""

    def __init__(self, stage, exc):
        super().__init__(f"[{stage}] {exc}")
        self.stage = stage


class _stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


# ---------------------------------------------------------------------------
# synthetic cohorts
# ---------------------------------------------------------------------------


@dataclass
class Sample:
    id: str
    label: int
    subject: int
    appearance: np.ndarray  # (c, h, w)
    motion: Optional[dynamics.MotionSequence] = None
    torques: Optional[dynamics.TorqueSequence] = None


@dataclass
class SyntheticCohortSpec:
    """Parameters of a synthetic labeled cohort.

    ``signatures`` has shape ``(n_classes, n_dof, 3)`` with rows
    ``(amplitude N m, frequency Hz, phase rad)`` per degree of freedom; when
    omitted it is drawn from ``seed``. Each oscillation's angle amplitude is
    chosen so its inertial torque at the rest pose has the given amplitude
    (capped at ``max_angle``).
    """

    n_subjects: int = 40
    n_classes: int = 2
    sequences_per_subject: int = 4
    frames: int = 64
    dt: float = 1.0 / 30.0
    chain: dynamics.KinematicChain = field(default_factory=dynamics.leg_chain)
    signatures: Optional[np.ndarray] = None
    appearance_noise: float = 1.0
    appearance_separation: float = 1.0
    appearance_shape: tuple = (4, 2, 2)
    amplitude_jitter: float = 0.1
    phase_jitter: float = 0.2
    coordinate_noise: float = 0.0
    max_angle: float = 0.8
    seed: int = 0

    def validate(self):
        if self.n_classes < 2:
            raise ValueError("invalid spec: need at least two classes")
        if self.frames < 3:
            raise ValueError("invalid spec: need at least three frames")
        if self.n_subjects < 1 or self.sequences_per_subject < 1:
            raise ValueError("invalid spec: need at least one subject and one sequence")
        if self.appearance_noise < 0:
            raise ValueError("invalid spec: appearance noise must be >= 0")
        if self.signatures is not None:
            sig = np.asarray(self.signatures, dtype=float)
            if sig.shape != (self.n_classes, self.chain.n_dof, 3):
                raise ValueError(
                    f"invalid spec: signatures must be ({self.n_classes}, {self.chain.n_dof}, 3), got {sig.shape}"
                )


def random_signatures(n_classes, n_dof, rng, amplitude=(2.0, 8.0), frequency=(0.5, 2.0)):
    sig = np.empty((n_classes, n_dof, 3))
    sig[..., 0] = rng.uniform(*amplitude, (n_classes, n_dof))
    sig[..., 1] = rng.uniform(*frequency, (n_classes, n_dof))
    sig[..., 2] = rng.uniform(0.0, 2.0 * np.pi, (n_classes, n_dof))
    return sig


def _appearance_prototypes(spec, rng):
    dim = int(np.prod(spec.appearance_shape))
    dirs = rng.normal(size=(spec.n_classes, dim))
    if spec.n_classes == 2:
        dirs[1] = -dirs[0]
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    # two antipodal prototypes sit `appearance_separation` apart
    return 0.5 * spec.appearance_separation * dirs


def generate_synthetic_cohort(spec):
    """Deterministic labeled cohort; subject ``s`` belongs to class ``s % n_classes``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    chain = spec.chain
    sig = np.asarray(spec.signatures, dtype=float) if spec.signatures is not None else random_signatures(
        spec.n_classes, chain.n_dof, rng)
    prototypes = _appearance_prototypes(spec, rng)
    rest_mass = np.diag(dynamics.mass_matrix(chain, np.zeros(chain.n_dof)))
    t = np.arange(spec.frames) * spec.dt
    samples = []
    for s in range(spec.n_subjects):
        label = s % spec.n_classes
        amp_scale = 1.0 + spec.amplitude_jitter * rng.normal(size=chain.n_dof)
        subj_phase = spec.phase_jitter * rng.normal(size=chain.n_dof)
        for k in range(spec.sequences_per_subject):
            amp_nm, freq, phase = sig[label, :, 0], sig[label, :, 1], sig[label, :, 2]
            omega = 2.0 * np.pi * freq
            angle_amp = np.minimum(amp_nm * amp_scale / (rest_mass * omega**2), spec.max_angle)
            start = rng.uniform(0.0, 2.0)
            q = angle_amp * np.sin(omega * (t[:, None] + start) + phase + subj_phase)
            if spec.coordinate_noise > 0:
                q = q + spec.coordinate_noise * rng.normal(size=q.shape)
            app = prototypes[label] + spec.appearance_noise * rng.normal(size=prototypes.shape[1])
            samples.append(Sample(
                id=f"s{s:03d}_q{k:02d}",
                label=label,
                subject=s,
                appearance=app.reshape(spec.appearance_shape),
                motion=dynamics.MotionSequence(q, spec.dt),
            ))
    return samples


def compute_torques(samples, chain):
    """Fill in ``torques`` for samples that only carry motion."""
    out = []
    for smp in samples:
        if smp.torques is None:
            if smp.motion is None:
                raise ValueError(f"sample {smp.id} has neither motion nor torques")
            smp = replace(smp, torques=dynamics.torques_from_sequence(chain, smp.motion))
        out.append(smp)
    return out


def write_cohort(directory, samples, chain, spec=None):
    """Store a cohort as chain.json, motion/<id>.txt and appearance.txt."""
    os.makedirs(os.path.join(directory, "motion"), exist_ok=True)
    tio.write_chain(os.path.join(directory, "chain.json"), chain)
    for smp in samples:
        tio.write_motion(os.path.join(directory, "motion", f"{smp.id}.txt"), smp.motion)
    shape = samples[0].appearance.shape
    lines = [f"# shape={','.join(map(str, shape))}"]
    for smp in samples:
        vals = " ".join(repr(float(v)) for v in smp.appearance.reshape(-1))
        lines.append(f"{smp.id} {smp.label} {smp.subject} {vals}")
    tio.atomic_write_text(os.path.join(directory, "appearance.txt"), "\n".join(lines) + "\n")
    if spec is not None:
        meta = {k: v for k, v in asdict(spec).items() if k not in ("chain", "signatures")}
        if spec.signatures is not None:
            meta["signatures"] = np.asarray(spec.signatures).tolist()
        tio.atomic_write_text(os.path.join(directory, "cohort.json"), json.dumps(meta, indent=2) + "\n")


def read_cohort(directory):
    """Inverse of :func:`write_cohort`; returns (samples, chain)."""
    chain = tio.read_chain(os.path.join(directory, "chain.json"))
    with open(os.path.join(directory, "appearance.txt")) as fh:
        lines = [ln for ln in fh if ln.strip()]
    shape = tuple(int(x) for x in lines[0].split("=", 1)[1].split(","))
    samples = []
    for ln in lines[1:]:
        parts = ln.split()
        sid, label, subject = parts[0], int(parts[1]), int(parts[2])
        app = np.array([float(v) for v in parts[3:]]).reshape(shape)
        motion = tio.ingest_motion_file(os.path.join(directory, "motion", f"{sid}.txt"))
        samples.append(Sample(sid, label, subject, app, motion=motion))
    return samples, chain


# ---------------------------------------------------------------------------
# experiment
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    cohort: Optional[str] = None  # directory written by write_cohort
    output: Optional[str] = None
    fusion: str = "decision"
    decision_weights: tuple = (0.5, 0.5)
    metrics: tuple = ("top1",)
    df_mode: str = "pooled"
    seed: int = 0
    seeds: tuple = ()  # when >= 2 seeds are given, runs are repeated and t-tested
    epochs: int = 20
    step_size: float = 1e-3
    batch_size: int = 16
    embed_dim: int = 32
    task: str = "synthetic"
    dataset: str = "cohort"

    def validate(self):
        if self.fusion not in fusion.OPERATORS:
            raise ValueError(f"unknown fusion operator {self.fusion!r}; choose from {fusion.OPERATORS}")
        for m in self.metrics:
            if m not in METRICS:
                raise ValueError(f"unknown metric {m!r}; choose from {METRICS}")
        if self.df_mode not in ("pooled", "welch"):
            raise ValueError(f"unknown df mode {self.df_mode!r}")

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            data = json.load(fh)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key in ("decision_weights", "metrics", "seeds"):
            if key in data:
                data[key] = tuple(data[key])
        base = os.path.dirname(os.path.abspath(path))
        for key in ("cohort", "output"):
            if data.get(key) and not os.path.isabs(data[key]):
                data[key] = os.path.join(base, data[key])
        return cls(**data)


class _LinearClassifier:
    """Multinomial logistic regression on standardized features (full-batch GD)."""

    def __init__(self, n_classes, steps=400, lr=0.5, l2=1e-3):
        self.n_classes, self.steps, self.lr, self.l2 = n_classes, steps, lr, l2

    def fit(self, X, y):
        self.mu = X.mean(axis=0)
        self.sd = np.maximum(X.std(axis=0), 1e-8)
        Z = (X - self.mu) / self.sd
        n = len(y)
        onehot = np.eye(self.n_classes)[y]
        self.W = np.zeros((Z.shape[1], self.n_classes))
        self.b = np.zeros(self.n_classes)
        for _ in range(self.steps):
            p = encoding.softmax(Z @ self.W + self.b)
            g = (p - onehot) / n
            self.W -= self.lr * (Z.T @ g + self.l2 * self.W)
            self.b -= self.lr * g.sum(axis=0)
        return self

    def predict_proba(self, X):
        return encoding.softmax(((X - self.mu) / self.sd) @ self.W + self.b)


def split_subjects(samples, seed):
    """Per class, half of the subjects (at least one) go to training."""
    rng = np.random.default_rng(seed)
    train_subjects = set()
    for label in sorted({s.label for s in samples}):
        subs = sorted({s.subject for s in samples if s.label == label})
        perm = rng.permutation(len(subs))
        n_train = max(1, len(subs) // 2) if len(subs) > 1 else 1
        train_subjects.update(subs[i] for i in perm[:n_train])
    train = np.array([s.subject in train_subjects for s in samples])
    return train


class Experiment:
    """One seeded run of the pipeline on in-memory samples.

    ``fit`` trains everything once; ``evaluate`` can then be called with
    different joint masks (applied to the normalized torques right before
    encoding) without retraining, which is how the joint ablation works.
    """

    def __init__(self, samples, config, chain=None):
        config.validate()
        self.config = config
        with _stage("dynamics"):
            self.samples = compute_torques(samples, chain) if chain is not None else list(samples)
            if any(s.torques is None for s in self.samples):
                raise ValueError("samples need torques, or pass the chain to compute them")
        self.labels = np.array([s.label for s in self.samples])
        self.n_classes = int(self.labels.max()) + 1
        self.joint_ids = self.samples[0].torques.joint_ids
        self._fitted = False

    # -- training ---------------------------------------------------------

    def fit(self):
        cfg = self.config
        with _stage("split"):
            self.train = split_subjects(self.samples, cfg.seed)
            self.test = ~self.train
            if not self.test.any():
                raise ValueError("no held-out subjects")
        with _stage("normalize"):
            self.norm = [encoding.normalize_sequence(s.torques) for s in self.samples]
        with _stage("encode"):
            enc_cfg = encoding.EncoderConfig(cfg.epochs, cfg.step_size, cfg.batch_size, cfg.seed, cfg.embed_dim)
            idx = np.flatnonzero(self.train)
            self.encoder = encoding.fit_encoder([self.norm[i] for i in idx], self.labels[idx], enc_cfg)
        with _stage("appearance"):
            self.app = np.stack([s.appearance.reshape(-1) for s in self.samples])
            self.app_clf = _LinearClassifier(self.n_classes).fit(self.app[self.train], self.labels[self.train])
            self.p_app = self.app_clf.predict_proba(self.app)
        with _stage("fuse"):
            self._init_fusion_params()
            if cfg.fusion not in ("decision",):
                feats = self._fused_features(self._force_embeddings(()))
                self.fused_clf = _LinearClassifier(self.n_classes).fit(feats[self.train], self.labels[self.train])
        self._fitted = True
        return self

    def _init_fusion_params(self):
        rng = np.random.default_rng(self.config.seed + 7919)
        c, h, w = self.samples[0].appearance.shape
        d = self.config.embed_dim
        self.proj_w = rng.normal(0.0, 1.0 / np.sqrt(d), (c, d))
        self.merge_w = rng.normal(0.0, 1.0 / np.sqrt(2 * c), (c, 2 * c))
        self.gen_w = rng.normal(0.0, 0.1 / np.sqrt(d), (w * w, d))
        self.gate_w = rng.normal(0.0, 1.0 / np.sqrt(c + d), c + d)
        self.token_width = d
        self.vis_tok_w = rng.normal(0.0, 1.0 / np.sqrt(c), (d, c))

    # -- evaluation -------------------------------------------------------

    def _force_embeddings(self, mask):
        seqs = self.norm if not mask else [encoding.mask_joints(t, mask) for t in self.norm]
        return np.stack([self.encoder.embed(t) for t in seqs])

    def _fuse_one(self, F, e):
        op = self.config.fusion
        if op == "bmm":
            G = fusion.make_spatial_transform(e, self.gen_w, None, F.shape[2])
            return fusion.fuse_bmm(F, G)
        if op == "tokens":
            vis = [fusion.Embedding(fusion.project_embedding(F[:, i, j], self.vis_tok_w), "vision")
                   for i in range(F.shape[1]) for j in range(F.shape[2])]
            return fusion.fuse_tokens(vis, [], [fusion.Embedding(e, "force")]).tokens
        P = fusion.project_embedding(e, self.proj_w, shape=F.shape)
        if op == "add":
            return fusion.fuse_addition(F, P)
        if op == "mul":
            return fusion.fuse_elementwise(F, P)
        if op == "concat":
            return fusion.fuse_concat(F, P, self.merge_w)
        if op == "gated":
            return fusion.fuse_gated(F, e, self.gate_w, 0.0, P)
        raise ValueError(f"operator {op!r} is not a feature-level operator")

    def _fused_features(self, force_emb):
        return np.stack([
            self._fuse_one(s.appearance, e).reshape(-1) for s, e in zip(self.samples, force_emb)
        ])

    def _metrics(self, scores, reprs):
        out = {}
        y_test = self.labels[self.test]
        for m in self.config.metrics:
            if m == "top1":
                out[m] = 100.0 * float(np.mean(scores[self.test].argmax(axis=1) == y_test))
        wanted = [m for m in self.config.metrics if m in RETRIEVAL_METRICS]
        if wanted:
            D = evaluation.distance_matrix(reprs[self.test], reprs[self.train], y_test, self.labels[self.train])
            r = evaluation.retrieval_metrics(D, ks=(1, 5, 10))
            for m in wanted:
                out[m] = 100.0 * r[m]
        return out

    def evaluate(self, mask=()):
        """Baseline vs force-augmented metrics on the held-out subjects."""
        if not self._fitted:
            self.fit()
        cfg = self.config
        mask = tuple(sorted(mask))
        with _stage("encode"):
            emb = self._force_embeddings(mask)
        with _stage("fuse"):
            if cfg.fusion == "decision":
                p_force = encoding.softmax(emb @ self.encoder.head_weight + self.encoder.head_bias)
                w = fusion.DecisionWeights(*cfg.decision_weights)
                fused, _ = fusion.fuse_decision(self.p_app, p_force, w)
                base_scores, base_repr = self.p_app, self.p_app
                aug_scores, aug_repr = fused, fused
            else:
                feats = self._fused_features(emb)
                base_scores, base_repr = self.p_app, self.app
                aug_scores, aug_repr = self.fused_clf.predict_proba(feats), feats
        with _stage("evaluate"):
            base = evaluation.EvalReport(cfg.task, cfg.dataset, self._metrics(base_scores, base_repr))
            aug = evaluation.EvalReport(cfg.task, cfg.dataset, self._metrics(aug_scores, aug_repr))
            return evaluation.delta_report(base, aug)


def _load_inputs(config, samples, chain):
    if samples is None:
        if not config.cohort:
            raise StageError("ingest", ValueError("config names no cohort directory"))
        with _stage("ingest"):
            samples, chain = read_cohort(config.cohort)
    return samples, chain


def run_experiment(config, samples=None, chain=None):
    """Run the pipeline (once, or once per seed in ``config.seeds``) and write the report."""
    config.validate()
    samples, chain = _load_inputs(config, samples, chain)
    if chain is not None:
        with _stage("dynamics"):
            samples = compute_torques(samples, chain)
    seeds = tuple(config.seeds)
    if len(seeds) < 2:
        report = Experiment(samples, config).evaluate()
    else:
        runs = [Experiment(samples, replace(config, seed=s, seeds=())).evaluate() for s in seeds]
        rows = []
        for k, row in enumerate(runs[0].rows):
            b = np.array([r.rows[k].baseline for r in runs])
            a = np.array([r.rows[k].augmented for r in runs])
            rows.append(evaluation.DeltaRow(row.task, row.dataset, row.metric, float(b.mean()), float(a.mean()),
                                            float(a.mean()) - float(b.mean())))
        report = evaluation.DeltaReport(rows)
        for k, row in enumerate(rows):
            b = [r.rows[k].baseline for r in runs]
            a = [r.rows[k].augmented for r in runs]
            tt = evaluation.t_test(
                evaluation.SampleSummary(float(np.mean(b)), float(np.std(b, ddof=1)), len(b)),
                evaluation.SampleSummary(float(np.mean(a)), float(np.std(a, ddof=1)), len(a)),
                df_mode=config.df_mode,
            )
            report.notes.append(
                f"{row.metric}: t={tt.t:.6g} df={tt.df:.6g} p={tt.p:.6g} significant={tt.significant}"
            )
    if config.output:
        with _stage("report"):
            tio.atomic_write_text(config.output, report.format_table())
    return report


@dataclass
class AblationRow:
    joints: tuple
    value: float
    delta: float


@dataclass
class AblationResult:
    metric: str
    reference: float
    rows: list

    def format_table(self):
        lines = [f"# metric={self.metric} unmasked={self.reference:.10g}", "joints value delta"]
        for r in self.rows:
            name = "+".join(map(str, r.joints)) if r.joints else "none"
            lines.append(f"{name} {r.value:.10g} {r.delta:+.10g}")
        return "\n".join(lines) + "\n"


def ablate_joints(config, joints, samples=None, chain=None, experiment=None):
    """Mask each entry of ``joints`` (an id or a collection of ids) and report the metric change.

    The change is ``masked - unmasked`` on the force-augmented metric, so
    a drop is negative. Training is done once, without masking.
    """
    if config.fusion not in fusion.OPERATORS:
        raise ValueError(f"unknown fusion operator {config.fusion!r}")
    if experiment is None:
        samples, chain = _load_inputs(config, samples, chain)
        experiment = Experiment(samples, config, chain).fit()
    metric = config.metrics[0]
    reference = evaluation_value(experiment.evaluate(), metric)
    rows = []
    for entry in joints:
        ids = tuple(sorted(entry)) if isinstance(entry, (set, frozenset, tuple, list)) else (entry,)
        value = evaluation_value(experiment.evaluate(mask=ids), metric)
        rows.append(AblationRow(ids, value, value - reference))
    result = AblationResult(metric, reference, rows)
    if config.output:
        with _stage("report"):
            tio.atomic_write_text(config.output, result.format_table())
    return result


def evaluation_value(report, metric):
    for r in report.rows:
        if r.metric == metric:
            return r.augmented
    raise KeyError(metric)
