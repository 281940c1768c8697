import json
import time
from importlib import resources

import jsonschema
import numpy as np
import pytest
from fastapi.testclient import TestClient
from numpy.testing import assert_allclose

from actionsynth import classifier as C
from actionsynth import data as d
from actionsynth import model as M
from actionsynth import pipeline as P
from actionsynth import service as sv


def _schema(name):
    ref = resources.files("actionsynth.assets.schemas").joinpath("responses.schema.json")
    doc = json.loads(ref.read_text())
    return {"$ref": f"#/$defs/{name}", "$defs": doc["$defs"]}


def validate(payload, schema_name):
    jsonschema.validate(payload, _schema(schema_name))


@pytest.fixture(scope="module")
def toy():
    return d.generate_toy_dataset(d.ToyDatasetConfig(n_tags=2, items_per_tag=5,
                                                     duration_range=(8, 12), seed=0))


@pytest.fixture(scope="module")
def state(toy, tmp_path_factory):
    cfg = M.ModelConfig(tag_count=2, n_joints=22, context_len=6, d_model=32,
                        d_ctrl_latent=24, n_heads=4, n_encoder_layers=1,
                        n_unroll_layers=1, n_decoder_layers=1, dropout=0.0,
                        max_duration=64)
    model = M.build_generator(cfg, seed=0)
    classifier = C.train_classifier(toy.items, 2, seed=0, epochs=3)
    bank = P.build_start_bank(toy.items, model)
    root = tmp_path_factory.mktemp("service")
    ckpt = root / "model.pt"
    clf_path = root / "clf.pt"
    ds_path = root / "toy.mot"
    M.save_checkpoint(model, str(ckpt))
    C.save_classifier(classifier, str(clf_path))
    d.save_dataset(toy, str(ds_path))
    return sv.ServiceState(
        model=model, classifier=classifier, bank=bank, dataset=toy,
        store=sv.MotionStore(str(root / "motions")),
        checkpoint_paths={"generator": str(ckpt), "classifier": str(clf_path)},
        blend_frames=2,
    )


@pytest.fixture(scope="module")
def client(state):
    return TestClient(sv.create_app(state))


def root_tag_id(toy):
    return next(i for i, t in enumerate(toy.vocabulary.tags)
                if t.kind == "intention-root")


def inplace_tag_id(toy):
    return next(i for i, t in enumerate(toy.vocabulary.tags)
                if t.kind != "intention-root")


def two_segment_body(toy, seed=0):
    return {
        "annotation": {
            "polyline": [[0.0, 0.0], [0.4, -0.4], [0.9, -0.9]],
            "segments": [
                {"kind": "root", "tag": root_tag_id(toy), "duration": 8,
                 "start": 0, "end": 2},
                {"kind": "in-place", "tag": inplace_tag_id(toy), "duration": 6,
                 "anchor": 2},
            ],
        },
        "seed": seed,
    }


def poll_until_done(client, job_id, timeout=60.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        doc = client.get(f"/api/jobs/{job_id}").json()
        validate(doc, "job")
        if doc["status"] in ("done", "failed"):
            return doc
        time.sleep(0.05)
    raise TimeoutError(f"job {job_id} did not finish")


class TestGenerateEndpoint:
    def test_valid_two_segment_annotation_accepted(self, client, toy):
        resp = client.post("/api/generate", json=two_segment_body(toy))
        assert resp.status_code == 202
        validate(resp.json(), "job_accepted")

    def test_request_body_matches_published_schema(self, toy):
        ref = resources.files("actionsynth.assets.schemas").joinpath(
            "generate_request.schema.json")
        schema = json.loads(ref.read_text())
        jsonschema.validate(two_segment_body(toy), schema)

    def test_zero_duration_segment_rejected_naming_it(self, client, toy):
        body = two_segment_body(toy)
        body["annotation"]["segments"][1]["duration"] = 0
        resp = client.post("/api/generate", json=body)
        assert resp.status_code == 400
        doc = resp.json()
        validate(doc, "validation_error")
        assert doc["errors"][0]["field"] == "segments[1]"

    def test_unknown_initial_motion_404(self, client, toy):
        body = two_segment_body(toy)
        body["initial_motion"] = "nope"
        resp = client.post("/api/generate", json=body)
        assert resp.status_code == 404

    def test_missing_annotation_rejected(self, client):
        resp = client.post("/api/generate", json={"seed": 1})
        assert resp.status_code == 400

    def test_same_seed_produces_bit_identical_motions(self, client, state, toy):
        ids = []
        for _ in range(2):
            resp = client.post("/api/generate", json=two_segment_body(toy, seed=123))
            job = poll_until_done(client, resp.json()["job_id"])
            assert job["status"] == "done"
            ids.append(job["result_ref"])
        a_clip, _ = state.store.load(ids[0])
        b_clip, _ = state.store.load(ids[1])
        assert np.array_equal(a_clip.rotations, b_clip.rotations)
        assert np.array_equal(a_clip.root, b_clip.root)
        assert state.store.path(ids[0]) != state.store.path(ids[1])


class TestJobAndMotionEndpoints:
    def test_unknown_job_404(self, client):
        assert client.get("/api/jobs/missing").status_code == 404

    def test_unknown_motion_404(self, client):
        assert client.get("/api/motions/missing").status_code == 404

    def test_full_round_trip_and_payload_schema(self, client, state, toy):
        resp = client.post("/api/generate", json=two_segment_body(toy, seed=7))
        job = poll_until_done(client, resp.json()["job_id"])
        assert job["status"] == "done"
        motion = client.get(f"/api/motions/{job['result_ref']}").json()
        validate(motion, "motion_payload")
        total = 8 + 6
        blends = sum(a["blend_frames"] for a in motion["actions"])
        assert motion["n_frames"] == total + blends
        assert len(motion["joints"]) == motion["n_frames"]
        assert len(motion["joints"][0]) == 22
        boundaries = [a["boundary_index"] for a in motion["actions"]]
        assert boundaries == sorted(boundaries)

    def test_stored_motion_equals_pipeline_output_bit_exactly(self, client, state, toy):
        body = two_segment_body(toy, seed=55)
        resp = client.post("/api/generate", json=body)
        job = poll_until_done(client, resp.json()["job_id"])
        stored_clip, header = state.store.load(job["result_ref"])
        # reload from the container once more: values must be identical
        clip2, _ = d.load_motion(state.store.path(job["result_ref"]))
        assert np.array_equal(stored_clip.rotations, clip2.rotations)
        assert np.array_equal(stored_clip.root, clip2.root)

    def test_file_format_download(self, client, state, toy, tmp_path):
        resp = client.post("/api/generate", json=two_segment_body(toy, seed=2))
        job = poll_until_done(client, resp.json()["job_id"])
        raw = client.get(f"/api/motions/{job['result_ref']}?format=file")
        assert raw.status_code == 200
        path = tmp_path / "dl.mot"
        path.write_bytes(raw.content)
        clip, header = d.load_motion(str(path))
        assert header["kind"] == "motion"


class TestMetadataEndpoints:
    def test_tags_lists_kinds(self, client, toy):
        doc = client.get("/api/tags").json()
        validate(doc, "tags")
        kinds = {t["kind"] for t in doc["tags"]}
        assert "intention-root" in kinds
        root_flags = {t["id"]: t["root_motion"] for t in doc["tags"]}
        for i, tag in enumerate(toy.vocabulary.tags):
            assert root_flags[i] == (tag.kind == "intention-root")

    def test_models_metadata(self, client):
        doc = client.get("/api/models").json()
        validate(doc, "models")
        kinds = {m["kind"] for m in doc["models"]}
        assert "generator" in kinds and "classifier" in kinds


class TestBuildState:
    def test_builds_from_checkpoint_files(self, state, toy, tmp_path):
        ds_path = tmp_path / "ds.mot"
        d.save_dataset(toy, str(ds_path))
        rebuilt = sv.build_state(
            state.checkpoint_paths["generator"], state.checkpoint_paths["classifier"],
            str(ds_path), str(tmp_path / "store"))
        assert rebuilt.bank.size() == len(toy.items)
        assert rebuilt.orientation_range is not None
        client = TestClient(sv.create_app(rebuilt))
        assert client.get("/api/tags").status_code == 200


class TestJobRegistry:
    def test_legal_transitions_only(self):
        reg = sv.JobRegistry()
        job = reg.create()
        with pytest.raises(RuntimeError):
            reg.advance(job.id, "done")
        reg.advance(job.id, "running")
        reg.advance(job.id, "done", result_ref="x")
        with pytest.raises(RuntimeError):
            reg.advance(job.id, "running")

    def test_failed_terminal(self):
        reg = sv.JobRegistry()
        job = reg.create()
        reg.advance(job.id, "running")
        reg.advance(job.id, "failed", error="boom")
        with pytest.raises(RuntimeError):
            reg.advance(job.id, "done")
