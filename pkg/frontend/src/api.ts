/** Client for the inference service: /health, /info, /synthesize.
 * Only one synthesis request is in flight at a time; a newer request
 * aborts the older one (latest wins). */

export interface ServiceInfo {
  resolution: number;
  phase: number;
  architecture_hash: string;
  checkpoint_path: string;
  label_format: string;
}

export interface SynthesisResult {
  png: Uint8Array;
  millis: number;
}

export class ServiceError extends Error {
  constructor(message: string, readonly status: number,
              readonly body: unknown) {
    super(message);
  }
}

type FetchLike = typeof fetch;

export class ServiceClient {
  private inflight: AbortController | null = null;

  constructor(readonly baseUrl: string,
              private readonly fetchImpl: FetchLike = fetch) {}

  async health(): Promise<boolean> {
    try {
      const r = await this.fetchImpl(`${this.baseUrl}/health`);
      return r.ok && (await r.text()) === "ok";
    } catch {
      return false;
    }
  }

  async info(): Promise<ServiceInfo> {
    const r = await this.fetchImpl(`${this.baseUrl}/info`);
    if (!r.ok) {
      throw new ServiceError(`GET /info failed (${r.status})`, r.status,
                             await r.text());
    }
    return (await r.json()) as ServiceInfo;
  }

  /** POST a label PNG. Resolves to null when superseded by a newer call. */
  async synthesize(labelPng: Uint8Array): Promise<SynthesisResult | null> {
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    let r: Response;
    try {
      r = await this.fetchImpl(`${this.baseUrl}/synthesize`, {
        method: "POST",
        body: labelPng as BodyInit,
        headers: { "Content-Type": "image/png" },
        signal: controller.signal,
      });
    } catch (err) {
      if (controller.signal.aborted) return null;
      throw err;
    }
    if (this.inflight === controller) this.inflight = null;
    if (controller.signal.aborted) return null;
    if (!r.ok) {
      let body: unknown;
      try {
        body = await r.json();
      } catch {
        body = await r.text().catch(() => "");
      }
      const detail = typeof body === "object" && body !== null &&
          "error" in body ? ` — ${(body as { error: string }).error}` : "";
      throw new ServiceError(`synthesis failed (${r.status})${detail}`,
                             r.status, body);
    }
    const png = new Uint8Array(await r.arrayBuffer());
    const millis = Number(r.headers.get("x-synth-millis") ?? -1);
    return { png, millis };
  }
}
