export interface Pt {
  x: number;
  y: number;
}

export type SegmentKind = "root" | "in-place";

export interface SegmentAssignment {
  kind: SegmentKind;
  tag: number;
  /** duration in frames at 30 Hz */
  duration: number;
}

export interface TagInfo {
  id: number;
  name: string;
  kind: string;
  root_motion: boolean;
}

export interface GenerateRequestSegment {
  kind: SegmentKind;
  tag: number;
  duration: number;
  start?: number;
  end?: number;
  anchor?: number;
}

export interface GenerateRequest {
  annotation: {
    polyline: number[][];
    segments: GenerateRequestSegment[];
  };
  seed?: number;
  initial_motion?: string;
}

export interface JobStatus {
  id: string;
  status: "pending" | "running" | "done" | "failed";
  result_ref?: string;
  error?: string;
}

export interface ActionRecord {
  tag: number;
  duration: number;
  boundary_index: number;
  blend_frames: number;
  revised: boolean;
  revision_skipped?: string | null;
  classifier_tag?: number | null;
  confidence?: number | null;
}

export interface MotionPayload {
  id: string;
  frame_rate: number;
  n_frames: number;
  skeleton: { names: string[]; parents: number[] };
  /** joints[t][j] = [x, y, z] in meters */
  joints: number[][][];
  actions: ActionRecord[];
}
