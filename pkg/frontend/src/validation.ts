// Client-side answer pre-validation, mirroring the server's rules so the
// form can prompt for corrections before anything is submitted.

import type { ServiceConfig } from "./api.js";

const KANA_EXTRAS = new Set(["ー", "゙", "゚"]);

function isKanaChar(ch: string): boolean {
  const code = ch.codePointAt(0) ?? 0;
  return (
    (code >= 0x3041 && code <= 0x309f) ||
    (code >= 0x30a1 && code <= 0x30fa) ||
    KANA_EXTRAS.has(ch)
  );
}

export function normalizeAnswer(text: string): string {
  return text.normalize("NFKC").trim();
}

/** Problems with one answer; an empty list means it can be submitted. */
export function validateAnswer(config: ServiceConfig, text: string): string[] {
  const norm = normalizeAnswer(text);
  if (norm.length === 0) return ["answer is empty"];
  const problems: string[] = [];
  if (config.answer_charset === "kana" && ![...norm].every(isKanaChar)) {
    problems.push("use kana characters only");
  }
  const n = [...norm].length;
  if (n < config.min_answer_chars || n > config.max_answer_chars) {
    problems.push(
      `character count ${n} outside ${config.min_answer_chars}-${config.max_answer_chars}`,
    );
  }
  return problems;
}

/** Per-index problems for a whole block; empty map means all valid. */
export function validateBlock(config: ServiceConfig, answers: string[]): Map<number, string[]> {
  const problems = new Map<number, string[]>();
  answers.forEach((text, i) => {
    const issues = validateAnswer(config, text);
    if (issues.length > 0) problems.set(i, issues);
  });
  return problems;
}

export function validatePipCount(raw: string): { ok: boolean; value: number; message?: string } {
  const value = Number(raw);
  if (!Number.isInteger(value)) {
    return { ok: false, value: NaN, message: "enter a whole number" };
  }
  if (value < 0 || value > 15) {
    return { ok: false, value, message: "count must be between 0 and 15" };
  }
  return { ok: true, value };
}
