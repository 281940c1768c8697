/**
 * Stick-figure playback state over a fetched motion payload: a frame cursor
 * driven by a timeline scrubber, plus front and top orthographic projections
 * (world z is up, the character faces -y at zero rotation).
 */

import { ActionRecord, MotionPayload, Pt } from "./types.js";

export interface ProjectedFigure {
  /** joint positions in canvas pixels */
  joints: Pt[];
  /** bone segments as index pairs [parent, child] */
  bones: [number, number][];
}

export interface Viewport {
  width: number;
  height: number;
  /** pixels per meter */
  scale: number;
  center: Pt;
}

export function bonePairs(parents: number[]): [number, number][] {
  const out: [number, number][] = [];
  for (let j = 1; j < parents.length; j++) {
    out.push([parents[j], j]);
  }
  return out;
}

/** Front view: world (x, z) onto canvas (x right, y up). */
export function projectFront(frame: number[][], viewport: Viewport,
                             parents: number[]): ProjectedFigure {
  const joints = frame.map(([x, , z]) => ({
    x: viewport.center.x + x * viewport.scale,
    y: viewport.center.y - z * viewport.scale,
  }));
  return { joints, bones: bonePairs(parents) };
}

/** Top view: world (x, y) onto canvas, matching the annotation canvas. */
export function projectTop(frame: number[][], viewport: Viewport,
                           parents: number[]): ProjectedFigure {
  const joints = frame.map(([x, y]) => ({
    x: viewport.center.x + x * viewport.scale,
    y: viewport.center.y + y * viewport.scale,
  }));
  return { joints, bones: bonePairs(parents) };
}

export interface PlaybackState {
  motion: MotionPayload;
  frame: number;
  playing: boolean;
}

export function newPlayback(motion: MotionPayload): PlaybackState {
  return { motion, frame: 0, playing: false };
}

export function scrub(state: PlaybackState, frame: number): PlaybackState {
  const clamped = Math.max(0, Math.min(state.motion.n_frames - 1, Math.round(frame)));
  return { ...state, frame: clamped };
}

export function advance(state: PlaybackState, dtMs: number): PlaybackState {
  if (!state.playing) return state;
  const step = (dtMs / 1000) * state.motion.frame_rate;
  const next = state.frame + step;
  return { ...state, frame: next >= state.motion.n_frames ? 0 : next };
}

/** The action record covering a frame, for boundary markers and flags. */
export function actionAt(motion: MotionPayload, frame: number): ActionRecord | null {
  let current: ActionRecord | null = null;
  for (const record of motion.actions) {
    if (frame >= record.boundary_index) {
      current = record;
    }
  }
  return current;
}

/** Timeline marker positions in [0, 1], one per action boundary. */
export function boundaryMarkers(motion: MotionPayload): number[] {
  if (motion.n_frames <= 1) return motion.actions.map(() => 0);
  return motion.actions.map((a) => a.boundary_index / (motion.n_frames - 1));
}

export function totalBlendFrames(motion: MotionPayload): number {
  return motion.actions.reduce((sum, a) => sum + a.blend_frames, 0);
}

export function revisedBoundaries(motion: MotionPayload): number[] {
  return motion.actions.filter((a) => a.revised).map((a) => a.boundary_index);
}
