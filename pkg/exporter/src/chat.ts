/**
 * Chat-completion client with response caching.
 *
 * Speaks the generic {model, messages} JSON shape, validates replies against
 * the mandated line format, retries, and writes fixtures the consumer loads
 * offline: {dataset, class, n, model, prompts}.
 */

import { promises as fs } from "node:fs";
import path from "node:path";

export interface ChatConfig {
  url: string;
  model: string;
  apiKey?: string;
  retries?: number;
  timeoutMs?: number;
}

export function chatConfigFromEnv(): ChatConfig {
  return {
    url: process.env.LDAG_LLM_URL ?? "",
    model: process.env.LDAG_LLM_MODEL ?? "gpt-o1",
    apiKey: process.env.LDAG_LLM_KEY,
  };
}

export function buildInstruction(classes: string[], target: string, n: number): string {
  const list = classes.join(", ");
  return (
    `There are ${classes.length} classes in a dataset: ${list}, ` +
    `List ${n} descriptions with key properties to describe the ${target} in terms of ` +
    `appearance, color, shape, size, or material, etc. These descriptions will help ` +
    `visually distinguish the ${target} from other classes in the dataset. Each ` +
    `description should follow the format: 'a clean origami ${target}. It + descriptive ` +
    `contexts'. Do not have any content output other than the given format. And try not ` +
    `to include any other class names in the description.`
  );
}

export function requiredPrefix(className: string): string {
  return `a clean origami ${className}. It `;
}

/** Keep reply lines matching the mandated prefix, strip list markers and quotes. */
export function parseReply(reply: string, className: string, n: number): string[] {
  const prefix = requiredPrefix(className).toLowerCase();
  const kept: string[] = [];
  for (const raw of reply.split("\n")) {
    const line = raw
      .replace(/^\s*(?:[-*•]+|\d+\s*[.):\]]?)?\s*/, "")
      .trim()
      .replace(/^["'`]+|["'`]+$/g, "")
      .trim();
    if (line.toLowerCase().startsWith(prefix)) {
      kept.push(requiredPrefix(className) + line.slice(prefix.length));
      if (kept.length === n) break;
    }
  }
  return kept;
}

async function postChat(config: ChatConfig, instruction: string): Promise<string> {
  const headers: Record<string, string> = { "Content-Type": "application/json" };
  if (config.apiKey) headers.Authorization = `Bearer ${config.apiKey}`;
  const response = await fetch(config.url, {
    method: "POST",
    headers,
    body: JSON.stringify({
      model: config.model,
      messages: [{ role: "user", content: instruction }],
    }),
    signal: AbortSignal.timeout(config.timeoutMs ?? 30000),
  });
  if (!response.ok) throw new Error(`chat endpoint returned ${response.status}`);
  const doc = (await response.json()) as { choices: { message: { content: string } }[] };
  return doc.choices[0].message.content;
}

function slug(text: string): string {
  return text.replace(/[^0-9a-zA-Z.]+/g, "-").replace(/^-+|-+$/g, "").toLowerCase();
}

export function fixturePath(
  dir: string,
  dataset: string,
  className: string,
  n: number,
  model: string,
): string {
  return path.join(dir, `${slug(dataset)}.${slug(className)}.n${n}.${slug(model)}.json`);
}

export interface FetchResult {
  prompts: string[];
  fromCache: boolean;
  rejectedLines: number;
}

/** Fetch n conforming attribute lines, serving and refreshing the fixture cache. */
export async function fetchAttributes(
  config: ChatConfig,
  classes: string[],
  target: string,
  n: number,
  fixtureDir: string,
  dataset: string,
  offline = false,
): Promise<FetchResult> {
  const cachePath = fixturePath(fixtureDir, dataset, target, n, config.model);
  const cached = await readFixture(cachePath);
  if (offline || !config.url) {
    if (cached) return { prompts: cached, fromCache: true, rejectedLines: 0 };
    throw new Error(`offline and no fixture for (${dataset}, ${target}, n=${n}, ${config.model})`);
  }
  const instruction = buildInstruction(classes, target, n);
  let lastReply = "";
  let transportFailure: unknown = null;
  for (let attempt = 0; attempt < (config.retries ?? 3); attempt++) {
    try {
      lastReply = await postChat(config, instruction);
    } catch (err) {
      transportFailure = err;
      continue;
    }
    transportFailure = null;
    const prompts = parseReply(lastReply, target, n);
    if (prompts.length === n) {
      const rejected = lastReply.split("\n").filter((l) => l.trim().length > 0).length - n;
      await writeFixture(cachePath, dataset, target, n, config.model, prompts);
      return { prompts, fromCache: false, rejectedLines: Math.max(0, rejected) };
    }
  }
  if (transportFailure !== null) {
    if (cached) return { prompts: cached, fromCache: true, rejectedLines: 0 };
    throw new Error(`chat endpoint unreachable: ${transportFailure}`);
  }
  throw new Error(`no reply with ${n} conforming lines; last reply: ${lastReply.slice(0, 200)}`);
}

async function readFixture(file: string): Promise<string[] | null> {
  try {
    const doc = JSON.parse(await fs.readFile(file, "utf-8")) as { prompts: string[] };
    return doc.prompts;
  } catch {
    return null;
  }
}

async function writeFixture(
  file: string,
  dataset: string,
  className: string,
  n: number,
  model: string,
  prompts: string[],
): Promise<void> {
  await fs.mkdir(path.dirname(file), { recursive: true });
  const doc = { class: className, dataset, model, n, prompts };
  const tmp = `${file}.tmp.${process.pid}`;
  await fs.writeFile(tmp, JSON.stringify(doc, null, 2) + "\n");
  await fs.rename(tmp, file);
}
