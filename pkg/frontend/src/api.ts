// Typed client for the experiment service JSON API. All server writes go
// through here; the UI holds no authoritative state.

export interface SessionSummary {
  participant_id: string;
  phase: "setup" | "tonepip" | "practice" | "main" | "done";
  volume_setting: string | null;
  tonepip_done: number[];
  tonepip_remaining: number[];
  block_index: number | null;
  n_blocks: number | null;
  block_served: number;
  block_size: number | null;
  answers_stored: number;
  done: boolean;
}

export interface ServiceConfig {
  tonepip_frequencies: number[];
  block_size: number;
  answer_charset: "kana" | "any";
  min_answer_chars: number;
  max_answer_chars: number;
}

export interface StimulusDescriptor {
  stimulus_id: string;
  block_index: number;
  index_in_block: number;
  audio_url: string;
}

export interface TonePipStored {
  frequency: number;
  n_pip: number;
  listening_level_db: number | null;
}

export class ApiError extends Error {
  constructor(
    public code: number,
    message: string,
    public status: number,
    public detail?: Record<string, string[]>,
  ) {
    super(message);
  }
}

/** Network-level failure (server unreachable), distinct from an API rejection. */
export class NetworkError extends Error {}

type FetchLike = typeof fetch;

/** Surface the flow controller needs; ApiClient is the real implementation. */
export interface ExperimentApi {
  getConfig(): Promise<ServiceConfig>;
  createSession(participantId: string, seed: number): Promise<SessionSummary>;
  getSession(sessionId: string): Promise<SessionSummary>;
  setVolume(sessionId: string, value: string): Promise<SessionSummary>;
  advance(sessionId: string): Promise<SessionSummary>;
  tonepipAudioUrl(sessionId: string, frequency: number): string;
  submitTonepip(sessionId: string, frequency: number, nPip: number): Promise<TonePipStored>;
  nextStimulus(sessionId: string): Promise<StimulusDescriptor>;
  fetchAudio(url: string): Promise<ArrayBuffer>;
  submitBlockAnswers(
    sessionId: string,
    blockIndex: number,
    answers: string[],
  ): Promise<SessionSummary>;
}

export class ApiClient implements ExperimentApi {
  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchLike = fetch,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, {
        method,
        headers: body === undefined ? {} : { "content-type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new NetworkError(String(err));
    }
    if (!response.ok) {
      let doc: { code?: number; message?: string; detail?: Record<string, string[]> } = {};
      try {
        doc = await response.json();
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(doc.code ?? -1, doc.message ?? response.statusText, response.status, doc.detail);
    }
    return (await response.json()) as T;
  }

  getConfig(): Promise<ServiceConfig> {
    return this.request("GET", "/api/config");
  }

  createSession(participantId: string, seed: number): Promise<SessionSummary> {
    return this.request("POST", "/api/sessions", { participant_id: participantId, seed });
  }

  getSession(sessionId: string): Promise<SessionSummary> {
    return this.request("GET", `/api/sessions/${encodeURIComponent(sessionId)}`);
  }

  setVolume(sessionId: string, value: string): Promise<SessionSummary> {
    return this.request("POST", `/api/sessions/${encodeURIComponent(sessionId)}/volume`, { value });
  }

  advance(sessionId: string): Promise<SessionSummary> {
    return this.request("POST", `/api/sessions/${encodeURIComponent(sessionId)}/advance`);
  }

  /** Path form, like StimulusDescriptor.audio_url; pass to fetchAudio. */
  tonepipAudioUrl(sessionId: string, frequency: number): string {
    return `/api/sessions/${encodeURIComponent(sessionId)}/tonepip/${frequency}/audio`;
  }

  submitTonepip(sessionId: string, frequency: number, nPip: number): Promise<TonePipStored> {
    return this.request("POST", `/api/sessions/${encodeURIComponent(sessionId)}/tonepip`, {
      frequency,
      n_pip: nPip,
    });
  }

  nextStimulus(sessionId: string): Promise<StimulusDescriptor> {
    return this.request("POST", `/api/sessions/${encodeURIComponent(sessionId)}/next-stimulus`);
  }

  async fetchAudio(url: string): Promise<ArrayBuffer> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + url, { method: "GET" });
    } catch (err) {
      throw new NetworkError(String(err));
    }
    if (!response.ok) {
      throw new ApiError(-1, `audio fetch failed: ${response.status}`, response.status);
    }
    return response.arrayBuffer();
  }

  submitBlockAnswers(
    sessionId: string,
    blockIndex: number,
    answers: string[],
  ): Promise<SessionSummary> {
    return this.request(
      "POST",
      `/api/sessions/${encodeURIComponent(sessionId)}/blocks/${blockIndex}/answers`,
      { answers },
    );
  }
}
