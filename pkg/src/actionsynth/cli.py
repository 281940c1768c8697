"""Command-line entry points: dataset tooling, training, generation,
evaluation, and the HTTP server."""

from __future__ import annotations

import json
import os
import sys

import click
import numpy as np

from . import classifier as clf_mod
from . import data as dataio
from . import geometry as geo
from . import metrics as mx
from . import pipeline as pl
from . import trajectory as traj
from .errors import MotionError
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .training import LossWeights, TrainConfig, train


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        _fail(f"cannot read {path}: {exc}")


@click.group()
def main():
    """Tag-conditioned multi-action motion synthesis."""


@main.command("make-toy-dataset")
@click.argument("config_path", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="output dataset path")
def make_toy_dataset(config_path, out):
    """Generate a procedural toy dataset from a JSON config."""
    doc = _load_json(config_path)
    try:
        cfg = dataio.ToyDatasetConfig(
            n_tags=int(doc.get("n_tags", 2)),
            items_per_tag=int(doc.get("items_per_tag", 20)),
            duration_range=tuple(doc.get("duration_range", (16, 28))),
            context_len=int(doc.get("context_len", 6)),
            seed=int(doc.get("seed", 0)),
        )
        dataset = dataio.generate_toy_dataset(cfg)
        dataio.save_dataset(dataset, out)
    except MotionError as exc:
        _fail(str(exc))
    click.echo(f"wrote {len(dataset)} items over {len(dataset.vocabulary)} tags to {out}")


def _model_config_from(doc: dict, tag_count: int, n_joints: int, context_len: int) -> ModelConfig:
    model_doc = dict(doc.get("model", {}))
    model_doc.setdefault("tag_count", tag_count)
    model_doc.setdefault("n_joints", n_joints)
    model_doc.setdefault("context_len", context_len)
    return ModelConfig(**model_doc)


def _train_config_from(doc: dict) -> TrainConfig:
    return TrainConfig(**doc.get("train", {}))


@main.command("train")
@click.argument("dataset_path", type=click.Path(exists=True))
@click.argument("config_path", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="checkpoint output path")
@click.option("--log", "log_path", type=click.Path(), default=None, help="CSV metric log")
def train_cmd(dataset_path, config_path, out, log_path):
    """Train the generator on a dataset with a JSON config."""
    doc = _load_json(config_path)
    try:
        dataset = dataio.load_dataset(dataset_path)
        model_config = _model_config_from(doc, len(dataset.vocabulary),
                                          dataset.n_joints, dataset.context_len)
        result = train(dataset, model_config, _train_config_from(doc), log_path=log_path)
        save_checkpoint(result.model, out)
    except MotionError as exc:
        _fail(str(exc))
    click.echo(f"final loss {result.log[-1]['loss_total']:.4f}; checkpoint at {out}")


@main.command("train-classifier")
@click.argument("dataset_path", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--epochs", default=80, show_default=True)
@click.option("--seed", default=0, show_default=True)
def train_classifier_cmd(dataset_path, out, epochs, seed):
    """Train the action recognition network used for revision and metrics."""
    try:
        dataset = dataio.load_dataset(dataset_path)
        classifier = clf_mod.train_classifier(dataset.items, len(dataset.vocabulary),
                                              seed=seed, epochs=epochs,
                                              n_joints=dataset.n_joints)
        clf_mod.save_classifier(classifier, out)
    except MotionError as exc:
        _fail(str(exc))
    acc = clf_mod.accuracy(classifier, dataset.items)
    click.echo(f"train accuracy {acc:.3f}; checkpoint at {out}")


@main.command("generate")
@click.argument("annotation_file", type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--classifier", "classifier_path", type=click.Path(exists=True), default=None)
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True),
              help="training dataset (context sampling and start-pose bank)")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def generate_cmd(annotation_file, checkpoint, classifier_path, dataset_path, seed, out):
    """Generate a motion from an annotation document."""
    doc = _load_json(annotation_file)
    try:
        model = load_checkpoint(checkpoint)
        dataset = dataio.load_dataset(dataset_path)
        annotation = traj.annotation_from_payload(doc.get("annotation", doc))
        requests = traj.preprocess_annotation(annotation, dataset.vocabulary)
        rng = np.random.default_rng(seed)
        candidates = [it for it in dataset.items if it.current_tag == requests[0].tag]
        if not candidates:
            candidates = dataset.items
        initial = candidates[int(rng.integers(len(candidates)))].initial_motion
        if classifier_path is not None:
            classifier = clf_mod.load_classifier(classifier_path)
            bank = pl.build_start_bank(dataset.items, model)
            result = pl.generate_chain_revised(requests, initial, model, classifier, bank,
                                               seed=seed)
        else:
            result = pl.generate_chain(requests, initial, model, seed=seed)
        sidecar = {"actions": [
            {"tag": r.tag, "duration": r.duration, "boundary_index": r.boundary_index,
             "blend_frames": r.blend_frames, "revised": r.revised,
             "classifier_tag": r.classifier_tag, "confidence": r.confidence}
            for r in result.records]}
        dataio.save_motion(out, result.motion, skeleton_ref=dataset.skeleton_ref,
                           sidecar=sidecar)
    except MotionError as exc:
        _fail(str(exc))
    click.echo(f"wrote {len(result.motion)} frames to {out}")


@main.command("evaluate")
@click.argument("dataset_path", type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["overall", "sufficient"]), default="overall",
              show_default=True)
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--classifier", "classifier_path", required=True, type=click.Path(exists=True))
@click.option("--report", "report_dir", required=True, type=click.Path())
@click.option("--n-actions", default=20, show_default=True)
@click.option("--n-chains", default=0, show_default=True,
              help="cap the number of chains (0 = one per pool item)")
@click.option("--split-ratio", default=0.2, show_default=True)
@click.option("--confidence", default=0.5, show_default=True,
              help="classifier confidence gate for the candidate pool")
@click.option("--revise/--no-revise", default=True, show_default=True)
@click.option("--seed", default=0, show_default=True)
def evaluate_cmd(dataset_path, mode, checkpoint, classifier_path, report_dir,
                 n_actions, n_chains, split_ratio, confidence, revise, seed):
    """Build multi-action chains from the test split, generate, and score them."""
    try:
        dataset = dataio.load_dataset(dataset_path)
        model = load_checkpoint(checkpoint)
        classifier = clf_mod.load_classifier(classifier_path)
        skeleton = dataset.skeleton()
        train_items, test_items = dataio.split_train_test(dataset, ratio=split_ratio, seed=seed)
        chains = dataio.build_multiaction_testset(
            train_items, test_items, dataset.vocabulary, classifier, mode,
            n_actions=n_actions, confidence=confidence, seed=seed)
        if n_chains:
            chains = chains[:n_chains]
        if not chains:
            _fail("no chains could be built (empty candidate pool)")
        bank = pl.build_start_bank(train_items, model)
        results = []
        for i, chain in enumerate(chains):
            requests = [pl.ActionRequest(tag=a.tag, duration=a.duration,
                                         trajectory=a.trajectory, frame="local")
                        for a in chain.actions]
            if revise:
                results.append(pl.generate_chain_revised(
                    requests, chain.initial_motion, model, classifier, bank,
                    seed=seed + i))
            else:
                results.append(pl.generate_chain(
                    requests, chain.initial_motion, model, seed=seed + i,
                    classifier=classifier))
        real_features = np.stack([classifier.extract_features(it.action) for it in test_items])
        report = mx.evaluate_multiaction(results, chains, classifier, real_features, skeleton)
        os.makedirs(report_dir, exist_ok=True)
        mx.write_report_csv(report, os.path.join(report_dir, "summary.csv"),
                            os.path.join(report_dir, "per_index.csv"))
        with open(os.path.join(report_dir, "report.json"), "w", encoding="utf-8") as fh:
            json.dump(mx.report_to_dict(report), fh, indent=2)
    except MotionError as exc:
        _fail(str(exc))
    click.echo(f"action QR {report.action_qr:.3f}, motion QR {report.motion_qr:.3f}; "
               f"report in {report_dir}")


@main.command("serve")
@click.option("--port", default=int(os.environ.get("ACTIONSYNTH_PORT", "8080")),
              show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--checkpoint", default=os.environ.get("ACTIONSYNTH_CHECKPOINT"),
              type=click.Path(exists=True))
@click.option("--classifier", "classifier_path",
              default=os.environ.get("ACTIONSYNTH_CLASSIFIER"), type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", default=os.environ.get("ACTIONSYNTH_DATASET"),
              type=click.Path(exists=True))
@click.option("--store", "store_dir", default=os.environ.get("ACTIONSYNTH_STORE", "motions"),
              type=click.Path())
@click.option("--workers", default=1, show_default=True)
def serve_cmd(port, host, checkpoint, classifier_path, dataset_path, store_dir, workers):
    """Run the HTTP API."""
    from .service import build_state, serve

    for name, value in [("--checkpoint", checkpoint), ("--classifier", classifier_path),
                        ("--dataset", dataset_path)]:
        if not value:
            _fail(f"{name} is required (flag or environment variable)")
    try:
        state = build_state(checkpoint, classifier_path, dataset_path, store_dir,
                            workers=workers)
    except MotionError as exc:
        _fail(str(exc))
    serve(state, host=host, port=port)


if __name__ == "__main__":
    main()
