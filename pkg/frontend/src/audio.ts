// WebAudio playback of WAV bytes at the recorded session volume. The
// context is created on the first user gesture (browser autoplay policy).

import type { AudioPlayer } from "./flow.js";

export class WebAudioPlayer implements AudioPlayer {
  private ctx: AudioContext | null = null;
  private gain: GainNode | null = null;
  private volume = 1.0;

  /** Must be called from a click handler once to unlock audio. */
  async unlock(): Promise<void> {
    if (this.ctx === null) {
      this.ctx = new AudioContext();
      this.gain = this.ctx.createGain();
      this.gain.gain.value = this.volume;
      this.gain.connect(this.ctx.destination);
    }
    if (this.ctx.state === "suspended") {
      await this.ctx.resume();
    }
  }

  setVolume(fraction: number): void {
    this.volume = Math.min(1, Math.max(0, fraction));
    if (this.gain) this.gain.gain.value = this.volume;
  }

  async play(data: ArrayBuffer): Promise<void> {
    await this.unlock();
    const ctx = this.ctx!;
    const buffer = await ctx.decodeAudioData(data.slice(0));
    await new Promise<void>((resolve) => {
      const source = ctx.createBufferSource();
      source.buffer = buffer;
      source.connect(this.gain!);
      source.onended = () => resolve();
      source.start();
    });
  }
}
