// DOM wiring: one screen per phase, all state changes via SessionFlow.

import { ApiError } from "./api.js";
import type { SessionFlow } from "./flow.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function show(section: string): void {
  for (const div of document.querySelectorAll<HTMLElement>("[data-screen]")) {
    div.hidden = div.dataset.screen !== section;
  }
}

function setStatus(text: string): void {
  el<HTMLElement>("status").textContent = text;
}

export function wireUi(flow: SessionFlow, unlockAudio: () => Promise<void>): void {
  const screens: Record<string, () => void | Promise<void>> = {
    setup: showSetup,
    tonepip: showTonepip,
    practice: showBlocks,
    main: showBlocks,
    done: showDone,
  };

  function render(): void {
    void screens[flow.summary.phase]?.();
  }

  // -- join -----------------------------------------------------------------

  el<HTMLButtonElement>("join-button").addEventListener("click", async () => {
    const pid = el<HTMLInputElement>("participant-id").value.trim();
    if (!pid) {
      setStatus("enter a participant id");
      return;
    }
    await unlockAudio();
    try {
      await flow.start(pid, Number(el<HTMLInputElement>("seed").value || "0"));
    } catch (err) {
      setStatus(err instanceof ApiError ? err.message : `cannot reach server: ${err}`);
      return;
    }
    setStatus(`session ${pid}: phase ${flow.summary.phase}`);
    render();
  });

  // -- volume setup -----------------------------------------------------------

  function showSetup(): void {
    show("setup");
  }

  el<HTMLButtonElement>("volume-save").addEventListener("click", async () => {
    const fraction = Number(el<HTMLInputElement>("volume-slider").value) / 100;
    await flow.setVolume(fraction);
    await flow.advance();
    setStatus("volume recorded; keep your device volume unchanged from now on");
    render();
  });

  // -- tone pips ---------------------------------------------------------------

  function showTonepip(): void {
    show("tonepip");
    const remaining = flow.tonepipRemaining();
    if (remaining.length === 0) return;
    el<HTMLElement>("tonepip-freq").textContent = `${remaining[0]} Hz`;
  }

  el<HTMLButtonElement>("tonepip-play").addEventListener("click", async () => {
    const remaining = flow.tonepipRemaining();
    if (remaining.length === 0) return;
    setStatus("playing: count the short beeps after the long reference tone");
    try {
      await flow.playTonepip(remaining[0]!);
      setStatus("enter how many beeps you heard (0-15)");
    } catch (err) {
      setStatus(`playback failed, try again: ${err}`);
    }
  });

  el<HTMLButtonElement>("tonepip-submit").addEventListener("click", async () => {
    const remaining = flow.tonepipRemaining();
    if (remaining.length === 0) return;
    const result = await flow.submitPips(remaining[0]!, el<HTMLInputElement>("tonepip-count").value);
    if (!result.ok) {
      setStatus(result.message ?? "invalid count");
      return;
    }
    el<HTMLInputElement>("tonepip-count").value = "";
    if (flow.tonepipRemaining().length === 0) {
      await flow.advance();
      setStatus("screening done; a practice round comes first");
    }
    render();
  });

  // -- word blocks ----------------------------------------------------------------

  let currentBlock = 0;

  function showBlocks(): void {
    show("blocks");
    const phase = flow.summary.phase === "practice" ? "practice" : "main task";
    el<HTMLElement>("block-phase").textContent = phase;
    el<HTMLElement>("block-progress").textContent =
      `block ${(flow.summary.block_index ?? 0) + 1} of ${flow.summary.n_blocks}`;
    el<HTMLElement>("answer-form").hidden = true;
    const pending = flow.pendingAnswers(flow.summary.block_index ?? 0);
    if (pending) {
      prepareAnswerForm(pending);
      setStatus("answers restored after connection loss; submit when ready");
    }
  }

  el<HTMLButtonElement>("block-play").addEventListener("click", async () => {
    el<HTMLButtonElement>("block-play").disabled = true;
    try {
      currentBlock = await flow.playBlock((i, n) => setStatus(`word ${i + 1} of ${n} - listen`));
      prepareAnswerForm();
      setStatus("type the words you wrote down, one per field (no time limit)");
    } finally {
      el<HTMLButtonElement>("block-play").disabled = false;
    }
  });

  function prepareAnswerForm(prefill?: string[]): void {
    const form = el<HTMLElement>("answer-fields");
    form.innerHTML = "";
    const n = flow.summary.block_size ?? 10;
    for (let i = 0; i < n; i++) {
      const row = document.createElement("div");
      row.className = "answer-row";
      const input = document.createElement("input");
      input.type = "text";
      input.id = `answer-${i}`;
      input.value = prefill?.[i] ?? "";
      input.autocomplete = "off";
      const label = document.createElement("label");
      label.textContent = `${i + 1}.`;
      label.htmlFor = input.id;
      const problem = document.createElement("span");
      problem.className = "problem";
      problem.id = `problem-${i}`;
      row.append(label, input, problem);
      form.append(row);
    }
    el<HTMLElement>("answer-form").hidden = false;
  }

  el<HTMLButtonElement>("answers-submit").addEventListener("click", async () => {
    const n = flow.summary.block_size ?? 10;
    const answers: string[] = [];
    for (let i = 0; i < n; i++) {
      answers.push(el<HTMLInputElement>(`answer-${i}`).value);
      el<HTMLElement>(`problem-${i}`).textContent = "";
    }
    const result = await flow.submitAnswers(currentBlock, answers);
    if (!result.accepted) {
      if (result.retriable) {
        setStatus("connection lost; answers kept - submit again when back online");
        return;
      }
      for (const [index, messages] of result.problems) {
        el<HTMLElement>(`problem-${index}`).textContent = messages.join("; ");
      }
      setStatus("fix the marked answers and submit again");
      return;
    }
    if (flow.summary.phase === "practice" && !flow.blocksRemaining()) {
      await flow.advance();
      setStatus("practice finished - the main task starts now");
    } else if (flow.summary.done) {
      setStatus("all blocks finished");
    } else {
      setStatus("block saved");
    }
    render();
  });

  function showDone(): void {
    show("done");
  }
}
