/** In-process express stand-in for the generation service, used by the
 * end-to-end smoke test. Mimics the job lifecycle (pending -> running ->
 * done after a couple of polls) and serves a tiny deterministic motion. */

import express from "express";
import type { Server } from "node:http";
import { AddressInfo } from "node:net";

import { ActionRecord, GenerateRequest, MotionPayload, TagInfo } from "../src/types.js";

export const FIXTURE_TAGS: TagInfo[] = [
  { id: 0, name: "sway", kind: "intention-inplace", root_motion: false },
  { id: 1, name: "stride", kind: "intention-root", root_motion: true },
];

const PARENTS = [-1, 0, 0, 1, 2];
const NAMES = ["root", "l", "r", "ll", "rr"];

function syntheticMotion(id: string, request: GenerateRequest): MotionPayload {
  const actions: ActionRecord[] = [];
  let cursor = 0;
  request.annotation.segments.forEach((segment, i) => {
    const revised = i === 1;   // flag one action as revised for the UI path
    const blend = revised && i > 0 ? 2 : 0;
    cursor += blend;
    actions.push({
      tag: segment.tag, duration: segment.duration, boundary_index: cursor,
      blend_frames: blend, revised, revision_skipped: null,
      classifier_tag: segment.tag, confidence: 0.9,
    });
    cursor += segment.duration;
  });
  const nFrames = cursor;
  const seed = request.seed ?? 0;
  const joints: number[][][] = [];
  for (let t = 0; t < nFrames; t++) {
    const frame: number[][] = [];
    for (let j = 0; j < PARENTS.length; j++) {
      const phase = (t / nFrames) * 2 * Math.PI + j + seed;
      frame.push([0.1 * j + 0.02 * Math.sin(phase), 0.01 * t, 0.9 + 0.05 * Math.cos(phase)]);
    }
    joints.push(frame);
  }
  return {
    id, frame_rate: 30, n_frames: nFrames,
    skeleton: { names: NAMES, parents: PARENTS },
    joints, actions,
  };
}

export interface Fixture {
  baseUrl: string;
  close(): Promise<void>;
  generateCalls: GenerateRequest[];
}

export async function startFixture(pollsUntilDone = 2): Promise<Fixture> {
  const app = express();
  app.use(express.json());
  const jobs = new Map<string, { polls: number; motionId: string }>();
  const motions = new Map<string, MotionPayload>();
  const generateCalls: GenerateRequest[] = [];
  let counter = 0;

  app.get("/api/tags", (_req, res) => {
    res.json({ tags: FIXTURE_TAGS });
  });

  app.post("/api/generate", (req, res) => {
    const body = req.body as GenerateRequest;
    if (!body.annotation || !Array.isArray(body.annotation.segments)) {
      res.status(400).json({ errors: [{ field: "annotation", message: "missing annotation" }] });
      return;
    }
    const bad = body.annotation.segments.findIndex((s) => s.duration < 1);
    if (bad >= 0) {
      res.status(400).json({
        errors: [{ field: `segments[${bad}]`, message: "duration must be >= 1" }],
      });
      return;
    }
    const jobId = `job-${counter}`;
    const motionId = `motion-${counter}`;
    counter += 1;
    jobs.set(jobId, { polls: 0, motionId });
    motions.set(motionId, syntheticMotion(motionId, body));
    generateCalls.push(body);
    res.status(202).json({ job_id: jobId });
  });

  app.get("/api/jobs/:id", (req, res) => {
    const job = jobs.get(req.params.id);
    if (!job) {
      res.status(404).json({ detail: `unknown job ${req.params.id}` });
      return;
    }
    job.polls += 1;
    if (job.polls <= 1) {
      res.json({ id: req.params.id, status: "pending" });
    } else if (job.polls <= pollsUntilDone) {
      res.json({ id: req.params.id, status: "running" });
    } else {
      res.json({ id: req.params.id, status: "done", result_ref: job.motionId });
    }
  });

  app.get("/api/motions/:id", (req, res) => {
    const motion = motions.get(req.params.id);
    if (!motion) {
      res.status(404).json({ detail: `unknown motion ${req.params.id}` });
      return;
    }
    res.json(motion);
  });

  const server: Server = await new Promise((resolve) => {
    const s = app.listen(0, "127.0.0.1", () => resolve(s));
  });
  const port = (server.address() as AddressInfo).port;
  return {
    baseUrl: `http://127.0.0.1:${port}`,
    generateCalls,
    close: () => new Promise((resolve) => server.close(() => resolve())),
  };
}
