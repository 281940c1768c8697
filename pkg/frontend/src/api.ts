/** Thin fetch client for the generation service, with job polling. */

import { GenerateRequest, JobStatus, MotionPayload, TagInfo } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, public detail: unknown) {
    super(`request failed with status ${status}`);
  }
}

export interface PollOptions {
  initialDelayMs?: number;
  maxDelayMs?: number;
  backoff?: number;
  timeoutMs?: number;
}

export class ApiClient {
  constructor(private baseUrl: string = "",
              private fetchFn: typeof fetch = fetch) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, init);
    const body = await resp.json().catch(() => null);
    if (!resp.ok && resp.status !== 202) {
      throw new ApiError(resp.status, body);
    }
    return body as T;
  }

  getTags(): Promise<{ tags: TagInfo[] }> {
    return this.request("/api/tags");
  }

  generate(body: GenerateRequest): Promise<{ job_id: string }> {
    return this.request("/api/generate", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  getJob(jobId: string): Promise<JobStatus> {
    return this.request(`/api/jobs/${jobId}`);
  }

  getMotion(motionId: string): Promise<MotionPayload> {
    return this.request(`/api/motions/${motionId}`);
  }

  /** Poll a job until it settles; exponential backoff between requests. */
  async pollJob(jobId: string, options: PollOptions = {}): Promise<JobStatus> {
    const initial = options.initialDelayMs ?? 100;
    const maxDelay = options.maxDelayMs ?? 2000;
    const backoff = options.backoff ?? 1.5;
    const timeout = options.timeoutMs ?? 120_000;
    const started = Date.now();
    let delay = initial;
    for (;;) {
      const job = await this.getJob(jobId);
      if (job.status === "done" || job.status === "failed") {
        return job;
      }
      if (Date.now() - started > timeout) {
        throw new Error(`job ${jobId} did not settle within ${timeout} ms`);
      }
      await new Promise((resolve) => setTimeout(resolve, delay));
      delay = Math.min(maxDelay, delay * backoff);
    }
  }
}
