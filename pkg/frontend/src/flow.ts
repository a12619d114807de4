// Session flow controller: drives one participant through volume setup,
// tone-pip counting, practice, and the timed word blocks. No DOM access;
// the UI layer and the tests inject playback, timing, and storage.

import { ApiError, NetworkError } from "./api.js";
import type { ExperimentApi, ServiceConfig, SessionSummary, StimulusDescriptor } from "./api.js";
import { validateBlock, validatePipCount } from "./validation.js";

/** Pacing between word presentations: the silent answer window. */
export const INTER_STIMULUS_MS = 4000;

export interface AudioPlayer {
  play(data: ArrayBuffer): Promise<void>;
  setVolume(fraction: number): void;
}

export interface KeyValueStore {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

export interface FlowDeps {
  api: ExperimentApi;
  player: AudioPlayer;
  sleep: (ms: number) => Promise<void>;
  storage: KeyValueStore;
}

export type BlockSubmission =
  | { accepted: true; summary: SessionSummary }
  | { accepted: false; problems: Map<number, string[]>; retriable: boolean };

export class SessionFlow {
  config!: ServiceConfig;
  summary!: SessionSummary;
  sessionId = "";

  constructor(private deps: FlowDeps) {}

  /** Create the session, or resume it if the id is already registered. */
  async start(participantId: string, seed: number): Promise<SessionSummary> {
    this.config = await this.deps.api.getConfig();
    this.sessionId = participantId;
    try {
      this.summary = await this.deps.api.createSession(participantId, seed);
    } catch (err) {
      if (err instanceof ApiError && err.code === 1011) {
        this.summary = await this.deps.api.getSession(participantId);
      } else {
        throw err;
      }
    }
    return this.summary;
  }

  async refresh(): Promise<SessionSummary> {
    this.summary = await this.deps.api.getSession(this.sessionId);
    return this.summary;
  }

  /** Record the device volume; it stays fixed for the whole session. */
  async setVolume(fraction: number): Promise<SessionSummary> {
    this.deps.player.setVolume(fraction);
    this.summary = await this.deps.api.setVolume(this.sessionId, `${Math.round(fraction * 100)}%`);
    return this.summary;
  }

  async advance(): Promise<SessionSummary> {
    this.summary = await this.deps.api.advance(this.sessionId);
    return this.summary;
  }

  // -- tone-pip screening ---------------------------------------------------

  /** Play one frequency's staircase; allowed any number of times before
   * its count is submitted (the server refuses replays afterwards). */
  async playTonepip(frequency: number): Promise<void> {
    const url = this.deps.api.tonepipAudioUrl(this.sessionId, frequency);
    const bytes = await this.deps.api.fetchAudio(url);
    await this.deps.player.play(bytes);
  }

  /** Validate and submit an audible-pip count for one frequency. */
  async submitPips(
    frequency: number,
    rawCount: string,
  ): Promise<{ ok: boolean; message?: string; listeningLevelDb?: number | null }> {
    const check = validatePipCount(rawCount);
    if (!check.ok) {
      return { ok: false, message: check.message };
    }
    const stored = await this.deps.api.submitTonepip(this.sessionId, frequency, check.value);
    this.summary = await this.deps.api.getSession(this.sessionId);
    return { ok: true, listeningLevelDb: stored.listening_level_db };
  }

  tonepipRemaining(): number[] {
    return this.summary.tonepip_remaining;
  }

  // -- word blocks ------------------------------------------------------------

  private pendingKey(blockIndex: number): string {
    return `silab:${this.sessionId}:${this.summary.phase}:block${blockIndex}:answers`;
  }

  /** Present the rest of the current block: fetch, play, pause 4 s between
   * words. Safe to call again after an interruption; serving state lives on
   * the server. Returns the block index to answer. */
  async playBlock(onWord?: (index: number, total: number) => void): Promise<number> {
    await this.refresh();
    const total = this.summary.block_size ?? 0;
    const blockIndex = this.summary.block_index ?? 0;
    while (this.summary.block_served < total) {
      const desc: StimulusDescriptor = await this.deps.api.nextStimulus(this.sessionId);
      const bytes = await this.deps.api.fetchAudio(desc.audio_url);
      onWord?.(desc.index_in_block, total);
      await this.deps.player.play(bytes);
      this.summary.block_served += 1;
      if (this.summary.block_served < total) {
        await this.deps.sleep(INTER_STIMULUS_MS);
      }
    }
    return blockIndex;
  }

  /** Client-validate then submit a block's answers. Network failures keep
   * the answers locally so they survive a reload and can be resubmitted. */
  async submitAnswers(blockIndex: number, answers: string[]): Promise<BlockSubmission> {
    const problems = validateBlock(this.config, answers);
    if (problems.size > 0) {
      return { accepted: false, problems, retriable: false };
    }
    this.deps.storage.setItem(this.pendingKey(blockIndex), JSON.stringify(answers));
    try {
      this.summary = await this.deps.api.submitBlockAnswers(this.sessionId, blockIndex, answers);
    } catch (err) {
      if (err instanceof NetworkError) {
        return { accepted: false, problems: new Map(), retriable: true };
      }
      if (err instanceof ApiError && err.detail) {
        const fieldProblems = new Map<number, string[]>();
        for (const [key, messages] of Object.entries(err.detail)) {
          fieldProblems.set(Number(key), messages);
        }
        return { accepted: false, problems: fieldProblems, retriable: false };
      }
      throw err;
    }
    this.deps.storage.removeItem(this.pendingKey(blockIndex));
    return { accepted: true, summary: this.summary };
  }

  /** Answers stashed before a network failure, if any. */
  pendingAnswers(blockIndex: number): string[] | null {
    const raw = this.deps.storage.getItem(this.pendingKey(blockIndex));
    return raw === null ? null : (JSON.parse(raw) as string[]);
  }

  blocksRemaining(): boolean {
    const n = this.summary.n_blocks;
    return n !== null && (this.summary.block_index ?? 0) < n;
  }
}
