"""Experiment orchestration: wire a config into datasets, servers, runs, reports.

Every stage seeds itself from the master seed through labeled derivations, so
a stored canonical config reproduces its run byte-for-byte. Dataset/split
randomness derives from data_seed (defaults to a child of the master seed) so
sweeps can share data while varying training seeds.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import InProcessChannel, TcpChannel
from .client import ArtifactBundle, ClientSetup, NoiseSpec, TrainConfig, run_algorithm1
from .config import ConfigError, ExperimentConfig, emit_config
from .data import Dataset, SplitBundle, load_features, make_synthetic, split_azsl
from .evaluate import EvalReport, eval_czsl, eval_gzsl, save_report
from .regularizers import fit_regularizer
from .seeding import derive_seed
from .server import TeacherModel, TeacherServer, serve, train_teacher


@dataclass
class RunResult:
    dataset: Dataset
    split: SplitBundle
    teacher: TeacherModel | None
    bundle: ArtifactBundle
    report_czsl: EvalReport
    report_gzsl: EvalReport
    outdir: Path | None


def resolve_data_seed(cfg: ExperimentConfig) -> int:
    return cfg.data_seed if cfg.data_seed is not None else derive_seed(cfg.seed, "data")


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.synthetic is not None:
        return make_synthetic(cfg.synthetic, derive_seed(resolve_data_seed(cfg), "dataset"))
    return load_features(cfg.dataset_path, cfg.dataset_format)


def build_split(cfg: ExperimentConfig, dataset: Dataset) -> SplitBundle:
    unseen = cfg.split_unseen
    if cfg.synthetic is not None and isinstance(unseen, int):
        unseen = cfg.synthetic.n_classes - cfg.synthetic.seen_count
    if not isinstance(unseen, int):
        unseen = list(unseen)
    return split_azsl(
        dataset,
        cfg.teacher_mode,
        unseen=unseen,
        unseen_train_ratio=cfg.split_ratio,
        seed=derive_seed(resolve_data_seed(cfg), "split"),
    )


def build_teacher(cfg: ExperimentConfig, dataset: Dataset, split: SplitBundle) -> TeacherModel:
    return train_teacher(
        dataset,
        split,
        epochs=cfg.teacher_epochs,
        batch_size=cfg.teacher_batch,
        seed=derive_seed(cfg.seed, "teacher"),
        hidden=cfg.teacher_hidden,
        lr=cfg.lr,
    )


def build_server(cfg: ExperimentConfig, dataset: Dataset, split: SplitBundle) -> tuple[TeacherServer, TeacherModel]:
    teacher = build_teacher(cfg, dataset, split)
    reg = fit_regularizer(dataset, split, cfg.regularizer, cfg.alpha)
    return TeacherServer(teacher, reg, cfg.scenario), teacher


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    return TrainConfig(
        t_g=cfg.t_g,
        t_s=cfg.t_s,
        batch_size=cfg.batch_size,
        per_class_count=cfg.per_class_count,
        alpha=cfg.alpha,
        noise=NoiseSpec(cfg.noise_dim, derive_seed(cfg.seed, "noise")),
        scenario=cfg.scenario,
        teacher_mode=cfg.teacher_mode,
        min_verified_per_class=cfg.min_verified,
        regen_retry_cap=cfg.retry_cap,
        verify=cfg.verify,
        refresh_targets=cfg.refresh_targets,
        lr=cfg.lr,
        seed=derive_seed(cfg.seed, "client"),
    )


def client_setup(cfg: ExperimentConfig, dataset: Dataset, split: SplitBundle) -> ClientSetup:
    return ClientSetup(
        d_x=dataset.d_x,
        teacher_classes=split.teacher_classes,
        all_classes=np.arange(dataset.n_classes),
        unseen_classes=split.unseen_classes,
        generator_hidden=cfg.generator_hidden,
        student_hidden=cfg.teacher_hidden,
    )


def run_experiment(cfg: ExperimentConfig, outdir: str | Path | None = None) -> RunResult:
    """Full pipeline: teacher (or remote connection), client training, both evals."""
    dataset = build_dataset(cfg)
    split = build_split(cfg, dataset)

    teacher = None
    if cfg.channel == "tcp":
        if cfg.synthetic is None:
            raise ConfigError("remote runs need the synthetic dataset source")
        channel = TcpChannel(*cfg.endpoint)
    else:
        server, teacher = build_server(cfg, dataset, split)
        channel = InProcessChannel(server)

    try:
        bundle = run_algorithm1(channel, dataset.semantics, train_config(cfg), client_setup(cfg, dataset, split))
    finally:
        channel.close()

    report_czsl = eval_czsl(bundle, split, dataset)
    report_gzsl = eval_gzsl(bundle, split, dataset)
    for report in (report_czsl, report_gzsl):
        report.seeds = [cfg.seed]

    out = None
    if outdir is not None:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.azsl").write_text(emit_config(cfg))
        bundle.save(out)
        save_report(report_czsl, out / "report_czsl.txt")
        save_report(report_gzsl, out / "report_gzsl.txt")
    return RunResult(
        dataset=dataset,
        split=split,
        teacher=teacher,
        bundle=bundle,
        report_czsl=report_czsl,
        report_gzsl=report_gzsl,
        outdir=out,
    )


def serve_experiment(
    cfg: ExperimentConfig,
    stop_event: threading.Event | None = None,
    ready=None,
) -> TeacherServer:
    """Train the teacher-side state and answer frames until stopped.

    The server transcript is flushed to <out>/server_transcript.json on exit.
    """
    if cfg.endpoint is None:
        raise ConfigError("serve requires endpoint = host:port")
    dataset = build_dataset(cfg)
    split = build_split(cfg, dataset)
    server, _ = build_server(cfg, dataset, split)
    try:
        serve(cfg.endpoint, server, stop_event=stop_event, ready=ready)
    finally:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        server.log.save(out / "server_transcript.json")
    return server
