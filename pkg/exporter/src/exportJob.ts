/**
 * Export pipeline: read dataset episodes (PPM scenes + PGM masks), run the
 * frozen encoders, and write the consumer's episode directory layout:
 *
 *   <out>/episodes/<id>/episode.json
 *                       query.clip.ldt (+ query.clip.ldt.pooled)
 *                       query.sam.ldt
 *                       query.mask.pgm
 *                       supportJ.sam.ldt / supportJ.mask.pgm
 *
 * Class-token removal and pooling happen here, so consumers always see
 * token grids whose count equals the patch grid exactly.
 */

import { promises as fs } from "node:fs";
import path from "node:path";

import { EncoderBackend, ImageTokens } from "./backends.js";
import { readMask, readPpm, writeMask } from "./netpbm.js";
import { writeTensor } from "./ldagtnsr.js";

export interface ExportJob {
  datasetRoot: string;
  outDir: string;
  backend: EncoderBackend;
  episodeIds?: string[]; // default: every directory under datasetRoot/episodes
}

export interface ExportedEpisode {
  episodeId: string;
  classId: string;
  files: string[];
}

/** Strip the class token and mean-pool the rest; validates the grid size. */
export function splitClassToken(tokens: ImageTokens): {
  grid: Float32Array;
  pooled: Float32Array;
} {
  const { tokenCount, dim, gridH, gridW } = tokens;
  if (tokenCount !== gridH * gridW + 1) {
    throw new Error(
      `token count ${tokenCount} does not match class token + ${gridH}x${gridW} patch grid`,
    );
  }
  const count = gridH * gridW;
  const grid = new Float32Array(dim * count); // channel-major dim x gh x gw
  const pooled = new Float32Array(dim);
  const pooled64 = new Float64Array(dim);
  for (let t = 0; t < count; t++) {
    for (let d = 0; d < dim; d++) {
      const v = tokens.tokens[(t + 1) * dim + d];
      grid[d * count + t] = v;
      pooled64[d] += v;
    }
  }
  for (let d = 0; d < dim; d++) pooled[d] = pooled64[d] / count;
  return { grid, pooled };
}

export function l2Normalize(v: Float32Array): Float32Array {
  let norm = 0.0;
  for (const x of v) norm += x * x;
  norm = Math.sqrt(norm);
  if (norm === 0) throw new Error("zero-norm embedding");
  const out = new Float32Array(v.length);
  for (let i = 0; i < v.length; i++) out[i] = v[i] / norm;
  return out;
}

async function listEpisodes(root: string): Promise<string[]> {
  const dir = path.join(root, "episodes");
  const entries = await fs.readdir(dir, { withFileTypes: true });
  return entries.filter((e) => e.isDirectory()).map((e) => e.name).sort();
}

export async function exportEpisode(job: ExportJob, episodeId: string): Promise<ExportedEpisode> {
  const src = path.join(job.datasetRoot, "episodes", episodeId);
  const dst = path.join(job.outDir, "episodes", episodeId);
  await fs.mkdir(dst, { recursive: true });
  const meta = JSON.parse(await fs.readFile(path.join(src, "episode.json"), "utf-8")) as {
    class_id: string;
    fold_id?: number;
  };
  const files: string[] = [];

  const query = await readPpm(path.join(src, "query.ppm"));
  const clip = await job.backend.encodeImageClip(query.data, query.height, query.width);
  const { grid, pooled } = splitClassToken(clip);
  const pooledFile = "query.clip.ldt.pooled";
  await writeTensor(path.join(dst, pooledFile), pooled, [clip.dim], {
    kind: "clip_pooled",
    source: "imported",
    model: job.backend.clipModel,
  });
  await writeTensor(path.join(dst, "query.clip.ldt"), grid, [clip.dim, clip.gridH, clip.gridW], {
    kind: "clip_tokens",
    source: "imported",
    model: job.backend.clipModel,
    pooled_file: pooledFile,
    class_id: meta.class_id,
  });
  files.push("query.clip.ldt", pooledFile);

  const samQ = await job.backend.encodeImageSam(query.data, query.height, query.width);
  await writeTensor(path.join(dst, "query.sam.ldt"), samQ.features,
    [samQ.dim, samQ.gridH, samQ.gridW],
    { kind: "sam_features", source: "imported", model: job.backend.samModel });
  files.push("query.sam.ldt");

  const qMask = await readMask(path.join(src, "query.mask.pgm"));
  await writeMask(path.join(dst, "query.mask.pgm"), qMask.data, qMask.height, qMask.width);
  files.push("query.mask.pgm");

  for (let j = 0; ; j++) {
    const supportImage = path.join(src, `support${j}.ppm`);
    try {
      await fs.access(supportImage);
    } catch {
      if (j === 0) throw new Error(`episode ${episodeId} has no support scenes`);
      break;
    }
    const scene = await readPpm(supportImage);
    const samS = await job.backend.encodeImageSam(scene.data, scene.height, scene.width);
    await writeTensor(path.join(dst, `support${j}.sam.ldt`), samS.features,
      [samS.dim, samS.gridH, samS.gridW],
      { kind: "sam_features", source: "imported", model: job.backend.samModel });
    const mask = await readMask(path.join(src, `support${j}.mask.pgm`));
    await writeMask(path.join(dst, `support${j}.mask.pgm`), mask.data, mask.height, mask.width);
    files.push(`support${j}.sam.ldt`, `support${j}.mask.pgm`);
  }

  await fs.writeFile(path.join(dst, "episode.json"), JSON.stringify({
    class_id: meta.class_id,
    episode_id: episodeId,
    fold_id: meta.fold_id ?? 0,
  }, null, 2) + "\n");
  files.push("episode.json");
  return { episodeId, classId: meta.class_id, files };
}

export async function exportAllEpisodes(job: ExportJob): Promise<ExportedEpisode[]> {
  const ids = job.episodeIds ?? (await listEpisodes(job.datasetRoot));
  const out: ExportedEpisode[] = [];
  for (const id of ids) {
    out.push(await exportEpisode(job, id));
  }
  return out;
}

/** Embed an attribute fixture's prompts; one unit-norm vector file per prompt. */
export async function exportTextEmbeddings(
  backend: EncoderBackend,
  fixtureFile: string,
  outDir: string,
): Promise<string[]> {
  const doc = JSON.parse(await fs.readFile(fixtureFile, "utf-8")) as {
    class: string;
    prompts: string[];
  };
  const className = doc.class;
  const slugged = className.replace(/[^0-9a-zA-Z]+/g, "-").toLowerCase();
  await fs.mkdir(outDir, { recursive: true });
  const files: string[] = [];

  const writeEmbedding = async (name: string, prompt: string, role: string) => {
    const vec = l2Normalize(await backend.encodeText(prompt));
    const file = path.join(outDir, name);
    await writeTensor(file, vec, [vec.length], {
      kind: "text_embedding",
      source: "imported",
      role,
      prompt,
      model: backend.clipModel,
    });
    files.push(file);
  };

  for (let i = 0; i < doc.prompts.length; i++) {
    await writeEmbedding(`${slugged}.attr${i}.ldt`, doc.prompts[i], "foreground-attribute");
  }
  await writeEmbedding(`${slugged}.template.ldt`, `a photo of ${className}`, "foreground-template");
  await writeEmbedding(`${slugged}.background.ldt`, `a photo without ${className}`, "background");
  return files;
}
