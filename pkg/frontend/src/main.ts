/** DOM wiring: annotation canvas, tag/duration form, generation flow, and
 * dual-view stick-figure playback. All logic lives in the pure modules. */

import { ApiClient, ApiError } from "./api.js";
import {
  CanvasAnnotation, DEFAULT_VIEW, addAction, addClick, canGenerate, curveSpans,
  emptyAnnotation, insertSplit, secondsToFrames, toRequest, validateAssignment,
  worldToCanvas,
} from "./annotation.js";
import {
  PlaybackState, actionAt, advance, boundaryMarkers, newPlayback, projectFront,
  projectTop, scrub, totalBlendFrames,
} from "./playback.js";
import { MotionPayload, TagInfo } from "./types.js";

const api = new ApiClient("");

let annotation: CanvasAnnotation = emptyAnnotation();
let tags: TagInfo[] = [];
let playback: PlaybackState | null = null;
let lastTick = 0;
let splitMode = false;

const $ = <T extends HTMLElement>(id: string) => document.getElementById(id) as T;

function canvas(): HTMLCanvasElement {
  return $<HTMLCanvasElement>("annotation-canvas");
}

function setStatus(text: string, isError = false) {
  const el = $("status");
  el.textContent = text;
  el.className = isError ? "status error" : "status";
}

// --- annotation canvas ------------------------------------------------------

function redrawAnnotation() {
  const ctx = canvas().getContext("2d")!;
  ctx.clearRect(0, 0, canvas().width, canvas().height);
  ctx.strokeStyle = "#888";
  ctx.lineWidth = 1;
  ctx.strokeRect(0, 0, canvas().width, canvas().height);

  const colors = ["#4895ef", "#8ac926", "#ff595e", "#ffbe0b", "#9d4edd"];
  const spans = curveSpans(annotation);
  spans.forEach((span, i) => {
    ctx.strokeStyle = colors[i % colors.length];
    ctx.lineWidth = 2.5;
    ctx.beginPath();
    for (let k = span.start; k <= span.end; k++) {
      const p = annotation.clicks[k];
      if (k === span.start) ctx.moveTo(p.x, p.y);
      else ctx.lineTo(p.x, p.y);
    }
    ctx.stroke();
  });
  annotation.clicks.forEach((p, i) => {
    const isSplit = annotation.splitIndices.includes(i);
    ctx.fillStyle = isSplit ? "#ff595e" : "#333";
    ctx.beginPath();
    ctx.arc(p.x, p.y, isSplit ? 5 : 3, 0, 2 * Math.PI);
    ctx.fill();
  });
  // in-place actions render as circles at their anchor
  let spanIdx = 0;
  let cursor = 0;
  annotation.actions.forEach((a) => {
    if (a.kind === "root") {
      cursor = spans[spanIdx] ? spans[spanIdx].end : cursor;
      spanIdx += 1;
    } else if (annotation.clicks[cursor]) {
      const p = annotation.clicks[cursor];
      ctx.strokeStyle = "#9d4edd";
      ctx.lineWidth = 2;
      ctx.beginPath();
      ctx.arc(p.x, p.y, 10, 0, 2 * Math.PI);
      ctx.stroke();
    }
  });
  const origin = worldToCanvas({ x: 0, y: 0 }, annotation.view);
  ctx.fillStyle = "#aaa";
  ctx.fillText("origin", origin.x + 4, origin.y - 4);

  renderActionList();
  $<HTMLButtonElement>("generate").disabled = !canGenerate(annotation);
}

function nearestClick(p: { x: number; y: number }): number {
  let best = -1;
  let bestDist = 12;
  annotation.clicks.forEach((c, i) => {
    const dist = Math.hypot(c.x - p.x, c.y - p.y);
    if (dist < bestDist) {
      best = i;
      bestDist = dist;
    }
  });
  return best;
}

function onCanvasClick(event: MouseEvent) {
  const rect = canvas().getBoundingClientRect();
  const p = { x: event.clientX - rect.left, y: event.clientY - rect.top };
  try {
    if (splitMode) {
      const idx = nearestClick(p);
      if (idx < 0) {
        setStatus("click near an existing point to split there", true);
        return;
      }
      annotation = insertSplit(annotation, idx);
      setStatus(`split inserted at point ${idx}; assignments reset`);
    } else {
      annotation = addClick(annotation, p);
      setStatus(`${annotation.clicks.length} points`);
    }
  } catch (err) {
    setStatus(String(err), true);
  }
  redrawAnnotation();
}

// --- assignment form --------------------------------------------------------

function renderTagOptions() {
  const select = $<HTMLSelectElement>("tag-select");
  select.innerHTML = "";
  tags.forEach((t) => {
    const option = document.createElement("option");
    option.value = String(t.id);
    option.textContent = `${t.name} (${t.root_motion ? "root" : "in-place"})`;
    select.appendChild(option);
  });
}

function renderActionList() {
  const list = $("action-list");
  list.innerHTML = "";
  annotation.actions.forEach((a, i) => {
    const item = document.createElement("li");
    const tag = tags.find((t) => t.id === a.tag);
    item.textContent = `${i + 1}. ${tag ? tag.name : a.tag} [${a.kind}] ${a.duration}f`;
    list.appendChild(item);
  });
}

function onAddAction() {
  const tagId = Number($<HTMLSelectElement>("tag-select").value);
  const tag = tags.find((t) => t.id === tagId);
  if (!tag) {
    setStatus("pick a tag", true);
    return;
  }
  const kind = tag.root_motion ? "root" : "in-place";
  const problem = validateAssignment(kind, tag);
  if (problem) {
    setStatus(problem, true);
    return;
  }
  const seconds = Number($<HTMLInputElement>("duration-input").value);
  try {
    annotation = addAction(annotation, {
      kind, tag: tagId, duration: secondsToFrames(seconds),
    });
    setStatus(`added ${tag.name}`);
  } catch (err) {
    setStatus(String(err), true);
  }
  redrawAnnotation();
}

// --- generation and playback -------------------------------------------------

async function onGenerate() {
  try {
    const seedRaw = $<HTMLInputElement>("seed-input").value;
    const seed = seedRaw === "" ? undefined : Number(seedRaw);
    const body = toRequest(annotation, seed);
    setStatus("generating...");
    const { job_id } = await api.generate(body);
    const job = await api.pollJob(job_id);
    if (job.status === "failed" || !job.result_ref) {
      setStatus(`generation failed: ${job.error ?? "unknown error"}`, true);
      return;
    }
    const motion = await api.getMotion(job.result_ref);
    startPlayback(motion);
    const blends = totalBlendFrames(motion);
    setStatus(`motion ${motion.id}: ${motion.n_frames} frames`
      + (blends ? ` (${blends} blend frames inserted)` : ""));
  } catch (err) {
    if (err instanceof ApiError && err.detail && (err.detail as any).errors) {
      const first = (err.detail as any).errors[0];
      setStatus(`${first.field}: ${first.message}`, true);
    } else {
      setStatus(String(err), true);
    }
  }
}

function startPlayback(motion: MotionPayload) {
  playback = newPlayback(motion);
  playback.playing = true;
  const scrubber = $<HTMLInputElement>("scrubber");
  scrubber.max = String(motion.n_frames - 1);
  renderMarkers(motion);
  lastTick = performance.now();
  requestAnimationFrame(tick);
}

function renderMarkers(motion: MotionPayload) {
  const bar = $("markers");
  bar.innerHTML = "";
  boundaryMarkers(motion).forEach((pos, i) => {
    const mark = document.createElement("div");
    mark.className = motion.actions[i].revised ? "marker revised" : "marker";
    mark.style.left = `${pos * 100}%`;
    mark.title = motion.actions[i].revised ? "revised action" : "action boundary";
    bar.appendChild(mark);
  });
}

function drawFigure(id: string, motion: MotionPayload, frame: number, view: "front" | "top") {
  const el = $<HTMLCanvasElement>(id);
  const ctx = el.getContext("2d")!;
  ctx.clearRect(0, 0, el.width, el.height);
  const viewport = {
    width: el.width, height: el.height, scale: 80,
    center: { x: el.width / 2, y: view === "front" ? el.height - 30 : el.height / 2 },
  };
  const joints = motion.joints[Math.floor(frame)];
  const fig = view === "front"
    ? projectFront(joints, viewport, motion.skeleton.parents)
    : projectTop(joints, viewport, motion.skeleton.parents);
  ctx.strokeStyle = "#4895ef";
  ctx.lineWidth = 2;
  for (const [a, b] of fig.bones) {
    ctx.beginPath();
    ctx.moveTo(fig.joints[a].x, fig.joints[a].y);
    ctx.lineTo(fig.joints[b].x, fig.joints[b].y);
    ctx.stroke();
  }
  ctx.fillStyle = "#222";
  for (const j of fig.joints) {
    ctx.beginPath();
    ctx.arc(j.x, j.y, 2.5, 0, 2 * Math.PI);
    ctx.fill();
  }
}

function tick(now: number) {
  if (!playback) return;
  playback = advance(playback, now - lastTick);
  lastTick = now;
  const frame = Math.floor(playback.frame);
  drawFigure("front-view", playback.motion, frame, "front");
  drawFigure("top-view", playback.motion, frame, "top");
  $<HTMLInputElement>("scrubber").value = String(frame);
  const record = actionAt(playback.motion, frame);
  if (record) {
    const tag = tags.find((t) => t.id === record.tag);
    $("frame-label").textContent =
      `frame ${frame}/${playback.motion.n_frames - 1} | ${tag ? tag.name : record.tag}`
      + (record.revised ? " (revised)" : "");
  }
  requestAnimationFrame(tick);
}

// --- setup -------------------------------------------------------------------

async function init() {
  annotation = emptyAnnotation({ ...DEFAULT_VIEW });
  canvas().addEventListener("click", onCanvasClick);
  $("add-action").addEventListener("click", onAddAction);
  $("generate").addEventListener("click", onGenerate);
  $("reset").addEventListener("click", () => {
    annotation = emptyAnnotation({ ...DEFAULT_VIEW });
    redrawAnnotation();
    setStatus("annotation cleared");
  });
  $<HTMLInputElement>("split-mode").addEventListener("change", (e) => {
    splitMode = (e.target as HTMLInputElement).checked;
  });
  $<HTMLInputElement>("scrubber").addEventListener("input", (e) => {
    if (playback) {
      playback.playing = false;
      playback = scrub(playback, Number((e.target as HTMLInputElement).value));
      drawFigure("front-view", playback.motion, playback.frame, "front");
      drawFigure("top-view", playback.motion, playback.frame, "top");
    }
  });
  $("play").addEventListener("click", () => {
    if (playback) {
      playback.playing = !playback.playing;
      lastTick = performance.now();
      requestAnimationFrame(tick);
    }
  });
  try {
    tags = (await api.getTags()).tags;
    renderTagOptions();
    setStatus("draw a trajectory by clicking on the canvas");
  } catch (err) {
    setStatus(`cannot reach the service: ${err}`, true);
  }
  redrawAnnotation();
}

document.addEventListener("DOMContentLoaded", init);
