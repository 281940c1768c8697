/**
 * Annotation state: a clicked polyline, split points dividing it into curve
 * spans, and an ordered list of action assignments. Root actions consume the
 * curve spans left to right; in-place actions anchor at the current position
 * without consuming curve, so several can stack on one point in assignment
 * order. Pure functions only, so the whole flow is testable without a DOM.
 *
 * Canvas pixels map to ground-plane meters through a uniform scale and an
 * origin offset (top-down view).
 */

import { GenerateRequest, GenerateRequestSegment, Pt, SegmentAssignment, TagInfo } from "./types.js";

export interface ViewTransform {
  /** meters per pixel */
  worldScale: number;
  /** canvas pixel that sits at world (0, 0) */
  originPx: Pt;
}

export interface CanvasAnnotation {
  clicks: Pt[];                 // canvas pixels, in click order
  splitIndices: number[];       // ascending interior indices into clicks
  actions: SegmentAssignment[]; // ordered action assignments
  view: ViewTransform;
}

export const DEFAULT_VIEW: ViewTransform = {
  worldScale: 0.02,
  originPx: { x: 320, y: 240 },
};

export function emptyAnnotation(view: ViewTransform = DEFAULT_VIEW): CanvasAnnotation {
  return { clicks: [], splitIndices: [], actions: [], view };
}

export function canvasToWorld(p: Pt, view: ViewTransform): Pt {
  return {
    x: (p.x - view.originPx.x) * view.worldScale,
    y: (p.y - view.originPx.y) * view.worldScale,
  };
}

export function worldToCanvas(p: Pt, view: ViewTransform): Pt {
  return {
    x: p.x / view.worldScale + view.originPx.x,
    y: p.y / view.worldScale + view.originPx.y,
  };
}

export function addClick(ann: CanvasAnnotation, p: Pt): CanvasAnnotation {
  return { ...ann, clicks: [...ann.clicks, p] };
}

/**
 * Insert a split at an interior click index. Splits at the curve ends or on
 * an existing split are rejected; assignments reset because the span layout
 * changed.
 */
export function insertSplit(ann: CanvasAnnotation, index: number): CanvasAnnotation {
  if (index <= 0 || index >= ann.clicks.length - 1) {
    throw new Error(`split index ${index} out of range`);
  }
  if (ann.splitIndices.includes(index)) {
    throw new Error(`duplicate split at index ${index}`);
  }
  const splitIndices = [...ann.splitIndices, index].sort((a, b) => a - b);
  return { ...ann, splitIndices, actions: [] };
}

export interface CurveSpan {
  start: number;
  end: number;
}

/** The curve spans between splits, in order; empty for a single click. */
export function curveSpans(ann: CanvasAnnotation): CurveSpan[] {
  if (ann.clicks.length < 2) return [];
  const cuts = [0, ...ann.splitIndices, ann.clicks.length - 1];
  const out: CurveSpan[] = [];
  for (let i = 0; i + 1 < cuts.length; i++) {
    out.push({ start: cuts[i], end: cuts[i + 1] });
  }
  return out;
}

function rootActionsIn(actions: SegmentAssignment[]): number {
  return actions.filter((a) => a.kind === "root").length;
}

/**
 * Append an assignment. Root actions must not outnumber the curve spans and
 * in-place actions are allowed anywhere (including a bare anchor click).
 */
export function addAction(ann: CanvasAnnotation, action: SegmentAssignment): CanvasAnnotation {
  if (action.duration < 1) {
    throw new Error("duration must be at least one frame");
  }
  if (ann.clicks.length === 0) {
    throw new Error("draw the trajectory (or an anchor point) first");
  }
  if (action.kind === "root") {
    const nSpans = curveSpans(ann).length;
    if (rootActionsIn(ann.actions) >= nSpans) {
      throw new Error("no unassigned curve segment left for a root action");
    }
  }
  return { ...ann, actions: [...ann.actions, action] };
}

export function validateAssignment(kind: "root" | "in-place", tag: TagInfo): string | null {
  if (kind === "root" && !tag.root_motion) {
    return `tag "${tag.name}" is not a root-motion tag`;
  }
  if (kind === "in-place" && tag.root_motion) {
    return `root-motion tag "${tag.name}" needs a curve segment`;
  }
  return null;
}

/** Generation unlocks once every curve span is assigned to a root action. */
export function canGenerate(ann: CanvasAnnotation): boolean {
  if (ann.clicks.length === 0 || ann.actions.length === 0) return false;
  return rootActionsIn(ann.actions) === curveSpans(ann).length;
}

export function secondsToFrames(seconds: number, fps = 30): number {
  return Math.max(1, Math.round(seconds * fps));
}

/**
 * Serialize to the service's request body: root actions take consecutive
 * click ranges, in-place actions anchor at the cursor between them.
 */
export function toRequest(ann: CanvasAnnotation, seed?: number,
                          initialMotion?: string): GenerateRequest {
  if (!canGenerate(ann)) {
    throw new Error("every curve segment needs a root action before generating");
  }
  const polyline = ann.clicks.map((p) => {
    const w = canvasToWorld(p, ann.view);
    return [w.x, w.y];
  });
  const spans = curveSpans(ann);
  const segments: GenerateRequestSegment[] = [];
  let spanIdx = 0;
  let cursor = 0;
  for (const action of ann.actions) {
    if (action.kind === "root") {
      const span = spans[spanIdx++];
      segments.push({ kind: "root", tag: action.tag, duration: action.duration,
                      start: span.start, end: span.end });
      cursor = span.end;
    } else {
      segments.push({ kind: "in-place", tag: action.tag, duration: action.duration,
                      anchor: cursor });
    }
  }
  const body: GenerateRequest = { annotation: { polyline, segments } };
  if (seed !== undefined) body.seed = seed;
  if (initialMotion !== undefined) body.initial_motion = initialMotion;
  return body;
}
