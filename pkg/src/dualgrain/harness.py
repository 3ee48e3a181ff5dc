"""Session orchestration: dual-branch training, freezing and snapshotting,
memory updates, decoupled classification, evaluation, and CKA probes."""

import json
import sys
from dataclasses import dataclass, field

import numpy as np
import torch

from . import losses
from .analysis import cka_matrix, mean_cross_session
from .attention import MultiSemanticCrossAttention
from .classifiers import brf_fit, brf_predict, forest_to_json
from .config import RunConfig
from .data import (
    ChannelScaler,
    GeneratorSpec,
    build_schedule,
    export_csv,
    generate_synthetic,
    ingest_csv,
    make_views,
)
from .encoder import ResNet1d, save_checkpoint
from .errors import ConfigError, StateError
from .gradcheck import parameter_checksum, snapshot
from .heads import ClassifierHead, Predictor, ProjectionHead
from .memory import ExemplarMemory, export_snapshot, update_memory

# seed-stream tags, combined with the run seed through SeedSequence
TAG_TRAIN_DATA, TAG_TEST_DATA, TAG_TORCH, TAG_SHUFFLE, TAG_VIEWS, TAG_MEMORY, TAG_FOREST, TAG_HEADS = range(1, 9)

CKA_PROBE_LIMIT = 256


def derive_seed(*tags):
    return int(np.random.SeedSequence(list(tags)).generate_state(1, dtype=np.uint64)[0] % (2**63))


@dataclass
class SessionReport:
    session: int
    overall_accuracy: float
    macro_accuracy: float
    per_class: dict
    checkpoint_accuracies: list
    checkpoint_avg_accuracy: float
    fused_head_accuracy: float = None
    loss_trace: str = None

    def to_dict(self):
        return {
            "session": self.session,
            "overall_accuracy": self.overall_accuracy,
            "macro_accuracy": self.macro_accuracy,
            "per_class": {str(k): v for k, v in sorted(self.per_class.items())},
            "checkpoint_accuracies": self.checkpoint_accuracies,
            "checkpoint_avg_accuracy": self.checkpoint_avg_accuracy,
            "fused_head_accuracy": self.fused_head_accuracy,
            "loss_trace": self.loss_trace,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            session=d["session"],
            overall_accuracy=d["overall_accuracy"],
            macro_accuracy=d["macro_accuracy"],
            per_class={int(k): v for k, v in d["per_class"].items()},
            checkpoint_accuracies=d["checkpoint_accuracies"],
            checkpoint_avg_accuracy=d["checkpoint_avg_accuracy"],
            fused_head_accuracy=d.get("fused_head_accuracy"),
            loss_trace=d.get("loss_trace"),
        )


@dataclass
class RunResult:
    config: dict
    method: str
    sessions: list = field(default_factory=list)  # SessionReport
    cka_labels: list = None
    cka_matrix: list = None
    # arrays kept in memory only (exported as flat binary, never into JSON)
    final_embeddings: np.ndarray = None
    final_embedding_labels: np.ndarray = None

    @property
    def session_accuracies(self):
        return [s.checkpoint_avg_accuracy for s in self.sessions]

    @property
    def average_accuracy(self):
        return float(np.mean(self.session_accuracies))

    def cka_branch_means(self):
        """Mean cross-session CKA per branch, from the stored matrix."""
        if self.cka_labels is None:
            return None
        matrix = np.asarray(self.cka_matrix)
        specific = [i for i, l in enumerate(self.cka_labels) if l.startswith("specific")]
        agnostic = [i for i, l in enumerate(self.cka_labels) if l.startswith("agnostic")]
        return {
            "specific": mean_cross_session(matrix, specific),
            "agnostic": mean_cross_session(matrix, agnostic),
        }

    def to_dict(self):
        return {
            "method": self.method,
            "config": self.config,
            "sessions": [s.to_dict() for s in self.sessions],
            "cka_labels": self.cka_labels,
            "cka_matrix": self.cka_matrix,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            config=d["config"],
            method=d["method"],
            sessions=[SessionReport.from_dict(s) for s in d["sessions"]],
            cka_labels=d.get("cka_labels"),
            cka_matrix=d.get("cka_matrix"),
        )


# ---------------------------------------------------------------------------
# data assembly


def build_raw_dataset(cfg):
    """Per-session training samples, the full test set, and the schedule,
    before standardization.  Synthetic by default; CSV paths in the dataset
    config bypass the generator."""
    ds = cfg.dataset
    schedule = build_schedule(
        ds.class_ids,
        ds.split_sizes,
        mode=ds.mode,
        dataset_family=ds.family,
        normal_count=ds.normal_count,
        fault_count=ds.fault_count,
        test_per_class=ds.test_per_class,
    )
    if ds.csv_train:
        if len(ds.csv_train) != schedule.n_sessions or not ds.csv_test:
            raise ConfigError("csv_train needs one file per session plus csv_test")
        train_sessions = [ingest_csv(p) for p in ds.csv_train]
        test_samples = ingest_csv(ds.csv_test)
    else:
        spec = GeneratorSpec(
            n_channels=ds.n_channels,
            length=ds.length,
            n_classes=ds.n_classes,
            class_signature_seed=ds.class_signature_seed,
            noise_level=ds.noise_level,
            shared_drift_amp=ds.shared_drift_amp,
            informative_channels=ds.informative_channels,
            signature_amp=ds.signature_amp,
        )
        train_seed = derive_seed(cfg.seed, TAG_TRAIN_DATA)
        test_seed = derive_seed(cfg.seed, TAG_TEST_DATA)
        next_id = 0
        train_sessions = []
        for spec_t in schedule.sessions:
            session_samples = []
            for class_id in spec_t.classes:
                count = spec_t.train_counts[class_id]
                session_samples.extend(generate_synthetic(spec, class_id, count, train_seed, start_id=next_id))
                next_id += count
            train_sessions.append(session_samples)
        test_samples = []
        for class_id in schedule.all_classes():
            test_samples.extend(generate_synthetic(spec, class_id, schedule.test_per_class, test_seed, start_id=next_id))
            next_id += schedule.test_per_class
    return train_sessions, test_samples, schedule


def build_dataset(cfg):
    """Raw dataset standardized per channel with frozen base-session statistics."""
    train_sessions, test_samples, schedule = build_raw_dataset(cfg)
    scaler = ChannelScaler().fit(train_sessions[0])
    train_sessions = [scaler.transform(s) for s in train_sessions]
    test_samples = scaler.transform(test_samples)
    return train_sessions, test_samples, schedule, scaler


def to_tensor(samples, dtype=torch.float32):
    return torch.tensor(np.stack([s.values for s in samples]), dtype=dtype)


# ---------------------------------------------------------------------------
# model bundle


class ModelBundle:
    """All trainable modules of one run, plus frozen teacher/anchor snapshots."""

    def __init__(self, cfg):
        self.cfg = cfg
        obj = cfg.objective
        abl = cfg.ablation
        self.cs_encoder = ResNet1d(cfg.encoder_config(with_moia=abl.use_moia))
        dim = self.cs_encoder.embedding_dim
        base_classes = list(cfg.dataset.class_ids[: cfg.dataset.split_sizes[0]])
        gen = torch.Generator().manual_seed(derive_seed(cfg.seed, TAG_HEADS, 0))
        self.cs_head = ClassifierHead(dim, base_classes, generator=gen)
        self.teacher = None

        if abl.use_ca_branch:
            ca_moia = abl.use_moia and cfg.moia_in_class_agnostic
            self.ca_encoder = ResNet1d(cfg.encoder_config(with_moia=ca_moia))
            self.ca_projector = ProjectionHead(dim) if obj.ca_projection_head else torch.nn.Identity()
            self.predictor = Predictor(dim)
            self.anchor_encoder = None
            self.anchor_projector = None
        else:
            self.ca_encoder = self.ca_projector = self.predictor = None
            self.anchor_encoder = self.anchor_projector = None

        if abl.use_msca and abl.use_ca_branch:
            self.msca = MultiSemanticCrossAttention(cfg.attention_config())
            self.fused_head = ClassifierHead(dim, base_classes, generator=gen)
        else:
            self.msca = None
            self.fused_head = None

    def trainable_modules(self):
        mods = {"cs_encoder": self.cs_encoder, "cs_head": self.cs_head}
        if self.ca_encoder is not None:
            mods.update(ca_encoder=self.ca_encoder, predictor=self.predictor)
            if not isinstance(self.ca_projector, torch.nn.Identity):
                mods["ca_projector"] = self.ca_projector
        if self.msca is not None:
            mods.update(msca=self.msca, fused_head=self.fused_head)
        return mods

    def parameters(self):
        for m in self.trainable_modules().values():
            yield from m.parameters()

    def train(self):
        for m in self.trainable_modules().values():
            m.train()

    def eval(self):
        for m in self.trainable_modules().values():
            m.eval()

    def expand_heads(self, new_classes, session):
        gen = torch.Generator().manual_seed(derive_seed(self.cfg.seed, TAG_HEADS, session))
        self.cs_head.expand(new_classes, generator=gen)
        if self.fused_head is not None:
            self.fused_head.expand(new_classes, generator=gen)

    def snapshot_roles(self):
        """Freeze the just-trained encoders as next session's teacher/anchor."""
        self.teacher = snapshot(self.cs_encoder)
        if self.ca_encoder is not None:
            self.anchor_encoder = snapshot(self.ca_encoder)
            self.anchor_projector = (
                snapshot(self.ca_projector) if not isinstance(self.ca_projector, torch.nn.Identity) else self.ca_projector
            )

    def embed(self, samples, batch_size=512, encoder=None):
        """L2-normalized class-specific embeddings as a numpy array."""
        encoder = encoder if encoder is not None else self.cs_encoder
        was_training = encoder.training
        encoder.eval()
        out = []
        with torch.no_grad():
            for i in range(0, len(samples), batch_size):
                out.append(encoder(to_tensor(samples[i : i + batch_size]))[1].numpy())
        if was_training:
            encoder.train()
        return np.concatenate(out).astype(np.float64)


# ---------------------------------------------------------------------------
# losses for one batch


def batch_losses(bundle, views, session):
    """Assemble the loss breakdown for one multiview batch."""
    cfg = bundle.cfg
    obj = cfg.objective
    abl = cfg.ablation
    x = to_tensor(views)
    label_list = [s.label for s in views]
    labels_t = torch.tensor(label_list, dtype=torch.long)

    fmap_cs, emb_cs = bundle.cs_encoder(x)
    l_scl = losses.supcon_loss(emb_cs, labels_t, obj.tau)

    zero = torch.zeros((), dtype=l_scl.dtype)
    l_kd = zero
    if session > 0 and abl.use_distillation:
        if bundle.teacher is None:
            raise StateError("incremental session without a frozen teacher")
        with torch.no_grad():
            teacher_emb = bundle.teacher(x)[1]
        l_kd = losses.rkd_loss(teacher_emb, emb_cs, obj.tau)

    l_ca = zero
    fmap_ca = None
    if abl.use_ca_branch:
        fmap_ca, emb_ca = bundle.ca_encoder(x)
        proj = bundle.ca_projector(emb_ca)
        z1, z2 = proj[0::2], proj[1::2]
        z_pred = z_prev = None
        if session > 0:
            if bundle.anchor_encoder is None:
                raise StateError("incremental session without a frozen class-agnostic anchor")
            with torch.no_grad():
                anchor_emb = bundle.anchor_encoder(x[0::2])[1]
                z_prev = bundle.anchor_projector(anchor_emb)
            z_pred = bundle.predictor(z1)
        l_ca = losses.ca_objective(
            session,
            z1,
            z2,
            obj.tau,
            z_pred=z_pred,
            z_prev=z_prev,
            include_positive_in_denominator=not obj.paper_literal_denominator,
        )

    l_mcls = zero
    l_kl = zero
    if bundle.msca is not None:
        z_m = bundle.msca(fmap_cs, fmap_ca)
        target = bundle.fused_head.target_index(label_list)
        l_mcls = losses.mcls_loss(z_m, target, bundle.fused_head)
        if abl.use_knowledge_transfer:
            p_fused = torch.softmax(bundle.fused_head(z_m.mean(dim=2)), dim=1)
            p_specific = torch.softmax(bundle.cs_head(emb_cs), dim=1)
            l_kl = losses.kl_align_loss(p_fused, p_specific)

    breakdown = losses.LossBreakdown(
        l_scl=l_scl,
        l_kd=l_kd,
        l_kl=l_kl,
        l_ca=l_ca,
        l_mcls=l_mcls,
        lambda_ca=obj.lambda_ca,
        mu_mcls=obj.mu_mcls,
    )
    total = losses.total_loss(l_scl, l_kd, l_kl, l_ca, l_mcls, obj.lambda_ca, obj.mu_mcls)
    return total, breakdown


# ---------------------------------------------------------------------------
# evaluation


def evaluate(predict_fn, test_samples, cumulative_classes):
    """Overall, macro, and per-class accuracy over the cumulative class set."""
    cumulative = sorted(cumulative_classes)
    subset = [s for s in test_samples if s.label in set(cumulative)]
    labels = np.array([s.label for s in subset])
    covered = sorted(set(labels.tolist()))
    if covered != cumulative:
        raise StateError(f"test set covers {covered}, expected the cumulative set {cumulative}")
    preds = np.asarray(predict_fn(subset))
    per_class = {}
    for c in cumulative:
        mask = labels == c
        per_class[int(c)] = float((preds[mask] == c).mean())
    overall = float((preds == labels).mean())
    macro = float(np.mean(list(per_class.values())))
    return overall, macro, per_class


def checkpoint_average(accuracies, window=10):
    kept = accuracies[-min(window, len(accuracies)) :]
    return float(np.mean(kept))


def fit_session_forest(bundle, fit_samples, cfg, session):
    feats = bundle.embed(fit_samples)
    labels = np.array([s.label for s in fit_samples])
    return brf_fit(
        feats,
        labels,
        n_trees=cfg.forest.n_trees,
        mtry=cfg.forest.mtry,
        seed=derive_seed(cfg.seed, TAG_FOREST, session),
    )


# ---------------------------------------------------------------------------
# session loop


def train_session(bundle, session, train_samples, test_samples, schedule, trace_fh, log=None):
    """One session's optimization; returns (SessionReport, forest, fit_samples)."""
    cfg = bundle.cfg
    opt = torch.optim.Adam(
        bundle.parameters(),
        lr=cfg.optimizer.learning_rate,
        weight_decay=cfg.optimizer.weight_decay,
    )
    shuffle_rng = np.random.default_rng(derive_seed(cfg.seed, TAG_SHUFFLE, session))
    views_seed_rng = np.random.default_rng(derive_seed(cfg.seed, TAG_VIEWS, session))
    cumulative = schedule.cumulative_classes(session)

    step = 0
    checkpoint_accs = []
    bundle.train()
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(train_samples))
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_samples[i] for i in order[start : start + cfg.batch_size]]
            views, _ = make_views(batch, int(views_seed_rng.integers(2**63 - 1)), frac=cfg.augment_frac)
            opt.zero_grad()
            total, breakdown = batch_losses(bundle, views, session)
            total.backward()
            opt.step()
            record = {"step": step, "session": session}
            record.update(breakdown.to_dict())
            trace_fh.write(json.dumps(record) + "\n")
            step += 1
        if (epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs:
            forest = fit_session_forest(bundle, train_samples, cfg, session)
            overall, _, _ = evaluate(
                lambda s: brf_predict(forest, bundle.embed(s)), test_samples, cumulative
            )
            checkpoint_accs.append(overall)
            bundle.train()
            if log:
                log(f"  session {session} epoch {epoch + 1}/{cfg.epochs} acc={overall:.4f}")

    bundle.eval()
    forest = fit_session_forest(bundle, train_samples, cfg, session)
    overall, macro, per_class = evaluate(
        lambda s: brf_predict(forest, bundle.embed(s)), test_samples, cumulative
    )
    fused_acc = None
    if bundle.msca is not None:
        fused_acc = fused_head_accuracy(bundle, test_samples, cumulative)
    report = SessionReport(
        session=session,
        overall_accuracy=overall,
        macro_accuracy=macro,
        per_class=per_class,
        checkpoint_accuracies=checkpoint_accs,
        checkpoint_avg_accuracy=checkpoint_average(checkpoint_accs, cfg.checkpoint_window),
        fused_head_accuracy=fused_acc,
    )
    return report, forest


def fused_head_accuracy(bundle, test_samples, cumulative_classes):
    """Diagnostic: accuracy of the fused-feature head (the decoupled forest
    remains the reported classifier)."""

    def predict(samples):
        preds = []
        with torch.no_grad():
            for start in range(0, len(samples), 512):
                x = to_tensor(samples[start : start + 512])
                fmap_cs, _ = bundle.cs_encoder(x)
                fmap_ca, _ = bundle.ca_encoder(x)
                z_m = bundle.msca(fmap_cs, fmap_ca)
                rows = bundle.fused_head(z_m.mean(dim=2)).argmax(dim=1).tolist()
                preds.extend(bundle.fused_head.class_ids[r] for r in rows)
        return preds

    overall, _, _ = evaluate(predict, test_samples, cumulative_classes)
    return overall


# ---------------------------------------------------------------------------
# full run


def run_experiment(cfg, out_dir, log=print):
    """Execute every session of the schedule; writes artifacts into out_dir
    and returns the RunResult."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    torch.manual_seed(derive_seed(cfg.seed, TAG_TORCH))

    train_sessions, test_samples, schedule, scaler = build_dataset(cfg)
    bundle = ModelBundle(cfg)
    memory = ExemplarMemory(capacity=cfg.memory.capacity, strategy=cfg.memory.strategy)
    memory_rng = np.random.default_rng(derive_seed(cfg.seed, TAG_MEMORY))

    result = RunResult(config=cfg.to_dict(), method=cfg.method)
    trace_path = os.path.join(out_dir, "loss_trace.jsonl")
    probes = {"specific": [], "agnostic": []}
    probe_samples = _stratified_probe(test_samples, schedule.all_classes(), CKA_PROBE_LIMIT)

    forest = None
    with open(trace_path, "w", encoding="utf-8") as trace_fh:
        for session in range(schedule.n_sessions):
            new_classes = list(schedule.sessions[session].classes)
            if session > 0:
                bundle.expand_heads(new_classes, session)
            teacher_sum = parameter_checksum(bundle.teacher) if bundle.teacher is not None else None
            train_data = list(memory.all_samples()) + list(train_sessions[session])
            if log:
                log(f"session {session}: {len(new_classes)} new classes, {len(train_data)} training samples")
            report, forest = train_session(
                bundle, session, train_data, test_samples, schedule, trace_fh, log=log
            )
            if teacher_sum is not None and parameter_checksum(bundle.teacher) != teacher_sum:
                raise StateError("frozen teacher changed during the session")
            report.loss_trace = "loss_trace.jsonl"
            result.sessions.append(report)

            new_class_samples = {}
            for c in new_classes:
                new_class_samples[c] = [s for s in train_sessions[session] if s.label == c]
            if memory.capacity > 0:
                memory = update_memory(
                    memory,
                    new_class_samples,
                    bundle.embed,
                    n_classes_seen=len(schedule.cumulative_classes(session)),
                    rng=memory_rng,
                )
                memory.check_capacity()
            bundle.snapshot_roles()

            probes["specific"].append(bundle.embed(probe_samples))
            if bundle.ca_encoder is not None:
                probes["agnostic"].append(bundle.embed(probe_samples, encoder=bundle.ca_encoder))

    named = {}
    for branch in ("agnostic", "specific"):
        for t, mat in enumerate(probes[branch]):
            named[f"{branch}-s{t + 1}"] = mat
    if named:
        labels, matrix = cka_matrix(named)
        result.cka_labels = labels
        result.cka_matrix = matrix.tolist()

    result.final_embeddings = bundle.embed(test_samples)
    result.final_embedding_labels = np.array([s.label for s in test_samples])

    _write_artifacts(bundle, forest, scaler, memory, cfg, out_dir)
    with open(os.path.join(out_dir, "results.json"), "w", encoding="utf-8") as fh:
        json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return result


def _write_artifacts(bundle, forest, scaler, memory, cfg, out_dir):
    import os

    save_checkpoint(bundle.cs_encoder, os.path.join(out_dir, "encoder_cs.npz"), config=bundle.cs_encoder.config)
    if bundle.ca_encoder is not None:
        save_checkpoint(bundle.ca_encoder, os.path.join(out_dir, "encoder_ca.npz"), config=bundle.ca_encoder.config)
    with open(os.path.join(out_dir, "forest.json"), "w", encoding="utf-8") as fh:
        fh.write(forest_to_json(forest))
        fh.write("\n")
    with open(os.path.join(out_dir, "scaler.json"), "w", encoding="utf-8") as fh:
        json.dump(scaler.to_dict(), fh, sort_keys=True)
        fh.write("\n")
    if memory.capacity > 0 and memory.total_stored > 0:
        export_snapshot(
            memory,
            os.path.join(out_dir, "memory.csv"),
            os.path.join(out_dir, "memory_manifest.json"),
        )


def _stratified_probe(test_samples, classes, limit):
    """Fixed probe set for representation-similarity analysis: an equal slice
    of every class's test samples, in deterministic order."""
    per_class = max(1, limit // len(classes))
    probe = []
    for c in classes:
        probe.extend([s for s in test_samples if s.label == c][:per_class])
    return probe


def log_stderr(message):
    print(message, file=sys.stderr)
