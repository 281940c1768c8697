"""HTTP boundary over the synthesis pipeline, plus motion persistence.

Generation runs asynchronously: POST /api/generate enqueues a job on a
bounded worker pool (default one worker, since decoding is autoregressive),
clients poll GET /api/jobs/{id} and fetch the stored motion afterwards.
"""

from __future__ import annotations

import logging
import os
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI
from fastapi.responses import FileResponse, JSONResponse

from . import data as dataio
from . import geometry as geo
from . import trajectory as traj
from .classifier import TrainedClassifier, load_classifier
from .errors import MotionError, SchemaError
from .metrics import split_result_actions
from .model import ActionGenerator, checkpoint_metadata, load_checkpoint
from .pipeline import PipelineResult, StartBank, build_start_bank, generate_chain_revised

log = logging.getLogger(__name__)

JOB_STATES = ("pending", "running", "done", "failed")
_LEGAL_TRANSITIONS = {("pending", "running"), ("running", "done"), ("running", "failed")}


@dataclass
class GenerationJob:
    id: str
    status: str = "pending"
    result_ref: str | None = None
    error: str | None = None


class JobRegistry:
    """Single-writer job store with enforced state transitions."""

    def __init__(self):
        self._jobs: dict[str, GenerationJob] = {}
        self._lock = threading.Lock()

    def create(self) -> GenerationJob:
        job = GenerationJob(id=uuid.uuid4().hex)
        with self._lock:
            self._jobs[job.id] = job
        return job

    def get(self, job_id: str) -> GenerationJob | None:
        with self._lock:
            return self._jobs.get(job_id)

    def advance(self, job_id: str, status: str, result_ref: str | None = None,
                error: str | None = None) -> None:
        with self._lock:
            job = self._jobs[job_id]
            if (job.status, status) not in _LEGAL_TRANSITIONS:
                raise RuntimeError(f"illegal job transition {job.status} -> {status}")
            job.status = status
            job.result_ref = result_ref
            job.error = error


class MotionStore:
    """Directory-backed store of generated motions plus sidecar reports."""

    def __init__(self, root: str):
        self.root = root
        os.makedirs(root, exist_ok=True)

    def path(self, motion_id: str) -> str:
        return os.path.join(self.root, f"{motion_id}.mot")

    def save(self, result: PipelineResult, skeleton_ref: str) -> str:
        motion_id = uuid.uuid4().hex
        sidecar = {
            "actions": [
                {"tag": r.tag, "duration": r.duration, "boundary_index": r.boundary_index,
                 "blend_frames": r.blend_frames, "revised": r.revised,
                 "revision_skipped": r.revision_skipped,
                 "classifier_tag": r.classifier_tag, "confidence": r.confidence}
                for r in result.records
            ],
        }
        dataio.save_motion(self.path(motion_id), result.motion,
                           skeleton_ref=skeleton_ref, sidecar=sidecar)
        return motion_id

    def load(self, motion_id: str):
        path = self.path(motion_id)
        if not os.path.exists(path):
            return None
        return dataio.load_motion(path)


@dataclass
class ServiceState:
    model: ActionGenerator
    classifier: TrainedClassifier
    bank: StartBank
    dataset: dataio.MotionDataset
    store: MotionStore
    checkpoint_paths: dict[str, str] = field(default_factory=dict)
    blend_frames: int = 4
    default_seed: int = 0
    workers: int = 1
    orientation_range: tuple[float, float] | None = None
    jobs: JobRegistry = field(default_factory=JobRegistry)
    executor: ThreadPoolExecutor = None

    def __post_init__(self):
        if self.executor is None:
            self.executor = ThreadPoolExecutor(max_workers=self.workers)
        if self.orientation_range is None:
            self.orientation_range = traj.trajectory_angle_range(self.dataset.items)


def build_state(checkpoint: str, classifier_path: str, dataset_path: str,
                store_dir: str, workers: int = 1) -> ServiceState:
    model = load_checkpoint(checkpoint)
    classifier = load_classifier(classifier_path)
    dataset = dataio.load_dataset(dataset_path)
    bank = build_start_bank(dataset.items, model)
    return ServiceState(
        model=model, classifier=classifier, bank=bank, dataset=dataset,
        store=MotionStore(store_dir), workers=workers,
        checkpoint_paths={"generator": checkpoint, "classifier": classifier_path},
    )


# ---------------------------------------------------------------------------
# request validation and execution
# ---------------------------------------------------------------------------

def _validation_error(field_name: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=400,
                        content={"errors": [{"field": field_name, "message": message}]})


def _pick_initial_motion(state: ServiceState, body: dict, first_tag: int, rng):
    """The user-supplied context (a stored motion ref) or a training item's
    context sampled from the same current tag."""
    ref = body.get("initial_motion")
    k = state.model.config.context_len
    if ref is not None:
        loaded = state.store.load(str(ref))
        if loaded is None:
            return None, JSONResponse(status_code=404,
                                      content={"detail": f"unknown initial motion {ref!r}"})
        clip, _ = loaded
        if len(clip) < k:
            return None, _validation_error("initial_motion", f"stored motion shorter than {k} frames")
        return clip.tail(k), None
    candidates = [it for it in state.dataset.items if it.current_tag == first_tag]
    if not candidates:
        candidates = state.dataset.items
    item = candidates[int(rng.integers(len(candidates)))]
    return item.initial_motion, None


def _run_job(state: ServiceState, job_id: str, requests, initial_motion, seed: int) -> None:
    state.jobs.advance(job_id, "running")
    try:
        result = generate_chain_revised(
            requests, initial_motion, state.model, state.classifier, state.bank,
            blend_frames=state.blend_frames, seed=seed,
            orientation_range=state.orientation_range)
        motion_id = state.store.save(result, state.dataset.skeleton_ref)
        state.jobs.advance(job_id, "done", result_ref=motion_id)
    except Exception as exc:  # noqa: BLE001 - job failures are reported, not raised
        log.exception("generation job %s failed", job_id)
        state.jobs.advance(job_id, "failed", error=str(exc))


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="actionsynth", version="0.1.0")
    app.state.service = state

    @app.post("/api/generate", status_code=202)
    def generate(body: dict):
        annotation_doc = body.get("annotation")
        if not isinstance(annotation_doc, dict):
            return _validation_error("annotation", "missing annotation object")
        try:
            annotation = traj.annotation_from_payload(annotation_doc)
            requests = traj.preprocess_annotation(annotation, state.dataset.vocabulary)
        except (SchemaError, MotionError) as exc:
            return _validation_error(_segment_field(str(exc)), str(exc))
        seed = body.get("seed", state.default_seed)
        if not isinstance(seed, int):
            return _validation_error("seed", "seed must be an integer")
        rng = np.random.default_rng(seed)
        initial_motion, err = _pick_initial_motion(state, body, requests[0].tag, rng)
        if err is not None:
            return err
        job = state.jobs.create()
        state.executor.submit(_run_job, state, job.id, requests, initial_motion, seed)
        return {"job_id": job.id}

    @app.get("/api/jobs/{job_id}")
    def job_status(job_id: str):
        job = state.jobs.get(job_id)
        if job is None:
            return JSONResponse(status_code=404, content={"detail": f"unknown job {job_id!r}"})
        doc = {"id": job.id, "status": job.status}
        if job.result_ref is not None:
            doc["result_ref"] = job.result_ref
        if job.error is not None:
            doc["error"] = job.error
        return doc

    @app.get("/api/motions/{motion_id}")
    def motion(motion_id: str, format: str = "playback"):
        loaded = state.store.load(motion_id)
        if loaded is None:
            return JSONResponse(status_code=404,
                                content={"detail": f"unknown motion {motion_id!r}"})
        if format == "file":
            return FileResponse(state.store.path(motion_id),
                                media_type="application/octet-stream",
                                filename=f"{motion_id}.mot")
        clip, header = loaded
        skeleton = geo.resolve_skeleton(header["skeleton"])
        joints = geo.clip_joint_positions(clip, skeleton)
        return {
            "id": motion_id,
            "frame_rate": clip.frame_rate,
            "n_frames": len(clip),
            "skeleton": {"names": list(skeleton.names), "parents": list(skeleton.parents)},
            "joints": np.round(joints, 6).tolist(),
            "actions": header.get("sidecar", {}).get("actions", []),
        }

    @app.get("/api/tags")
    def tags():
        return {"tags": [
            {"id": i, "name": t.name, "kind": t.kind,
             "root_motion": state.dataset.vocabulary.is_root_motion(i)}
            for i, t in enumerate(state.dataset.vocabulary.tags)
        ]}

    @app.get("/api/models")
    def models():
        out = []
        for name, path in state.checkpoint_paths.items():
            meta = checkpoint_metadata(path)
            meta["id"] = name
            meta["path"] = path
            out.append(meta)
        if not out:
            cfg = state.model.config
            out.append({"id": "generator", "kind": "generator", "path": None,
                        "format_version": None,
                        "config": {"d_model": cfg.d_model, "tag_count": cfg.tag_count},
                        "n_parameters": sum(p.numel() for p in state.model.parameters())})
        return {"models": out}

    return app


def _segment_field(message: str) -> str:
    """Surface 'segments[i]' from validation messages as the field name."""
    if message.startswith("segments["):
        return message.split(":", 1)[0]
    return "annotation"


def serve(state: ServiceState, host: str = "127.0.0.1", port: int = 8080) -> None:
    import uvicorn

    uvicorn.run(create_app(state), host=host, port=port)
