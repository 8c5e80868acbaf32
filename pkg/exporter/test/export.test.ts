import assert from "node:assert/strict";
import { execFileSync } from "node:child_process";
import { mkdir, mkdtemp, readFile, rm, writeFile } from "node:fs/promises";
import os from "node:os";
import path from "node:path";
import { test } from "node:test";

import { MockBackend } from "../src/backends.js";
import { readTensor } from "../src/ldagtnsr.js";
import { writeMask, writePpm } from "../src/netpbm.js";
import { exportAllEpisodes, exportTextEmbeddings, l2Normalize, splitClassToken } from "../src/exportJob.js";

const SIZE = 64;

function scene(fill: [number, number, number], y0: number, x0: number, side: number) {
  const image = new Float32Array(3 * SIZE * SIZE).fill(0.3);
  const mask = new Uint8Array(SIZE * SIZE);
  for (let y = y0; y < y0 + side; y++) {
    for (let x = x0; x < x0 + side; x++) {
      mask[y * SIZE + x] = 1;
      for (let c = 0; c < 3; c++) image[c * SIZE * SIZE + y * SIZE + x] = fill[c];
    }
  }
  return { image, mask };
}

async function makeDataset(root: string): Promise<void> {
  const episodes = [
    { id: "ep0", fill: [0.9, 0.1, 0.2] as [number, number, number] },
    { id: "ep1", fill: [0.1, 0.4, 0.9] as [number, number, number] },
  ];
  for (const { id, fill } of episodes) {
    const dir = path.join(root, "episodes", id);
    await mkdir(dir, { recursive: true });
    const q = scene(fill, 12, 20, 24);
    await writePpm(path.join(dir, "query.ppm"), q.image, SIZE, SIZE);
    await writeMask(path.join(dir, "query.mask.pgm"), q.mask, SIZE, SIZE);
    const s = scene(fill, 28, 8, 20);
    await writePpm(path.join(dir, "support0.ppm"), s.image, SIZE, SIZE);
    await writeMask(path.join(dir, "support0.mask.pgm"), s.mask, SIZE, SIZE);
    await writeFile(path.join(dir, "episode.json"),
      JSON.stringify({ class_id: "crafted square", fold_id: 0 }) + "\n");
  }
}

function python(code: string): string {
  return execFileSync("python3", ["-c", code], { encoding: "utf-8" });
}

test("class-token removal pins token count to the patch grid", async () => {
  const backend = new MockBackend(7n);
  const { image } = scene([0.5, 0.5, 0.5], 10, 10, 16);
  const tokens = await backend.encodeImageClip(image, SIZE, SIZE);
  assert.equal(tokens.tokenCount, tokens.gridH * tokens.gridW + 1);
  const { grid, pooled } = splitClassToken(tokens);
  assert.equal(grid.length, tokens.dim * tokens.gridH * tokens.gridW);
  assert.equal(pooled.length, tokens.dim);
  // a broken backend is caught
  assert.throws(() => splitClassToken({ ...tokens, tokenCount: tokens.tokenCount - 1 }),
    /does not match class token/);
});

test("export pipeline: conformance against the consumer's loader", async () => {
  const dir = await mkdtemp(path.join(os.tmpdir(), "export-"));
  try {
    await makeDataset(dir);
    const out = path.join(dir, "out");
    const backend = new MockBackend(7n);
    const exported = await exportAllEpisodes({ datasetRoot: dir, outDir: out, backend });
    assert.equal(exported.length, 2);

    // pooled equals the mean of the exported tokens within 1e-4
    const ep0 = path.join(out, "episodes", "ep0");
    const tokens = await readTensor(path.join(ep0, "query.clip.ldt"));
    const pooled = await readTensor(path.join(ep0, "query.clip.ldt.pooled"));
    const [dim, gh, gw] = tokens.shape;
    for (let d = 0; d < dim; d++) {
      let mean = 0;
      for (let t = 0; t < gh * gw; t++) mean += tokens.data[d * gh * gw + t];
      mean /= gh * gw;
      assert.ok(Math.abs(mean - pooled.data[d]) < 1e-4);
    }
    assert.equal(tokens.meta.kind, "clip_tokens");
    assert.equal(tokens.meta.source, "imported");
    assert.equal(tokens.meta.pooled_file, "query.clip.ldt.pooled");

    // every exported tensor validates under the consumer's reference loader
    const ldtFiles = exported.flatMap((e) =>
      e.files.filter((f) => f.endsWith(".ldt") || f.endsWith(".pooled"))
        .map((f) => path.join(out, "episodes", e.episodeId, f)));
    execFileSync("python3", ["-m", "ldag", "validate", ...ldtFiles], { encoding: "utf-8" });

    // and the consumer can assemble the whole episode from the directory
    const loaded = python(`
from ldag.training import load_encoded_episode
enc = load_encoded_episode(${JSON.stringify(ep0)})
print(enc.class_id, enc.clip_q.tokens.shape, enc.sam_q.features.shape, len(enc.sam_s))
`);
    assert.match(loaded, /crafted square \(64, 4, 4\) \(64, 4, 4\) 1/);

    // re-export is bitwise stable for the fixed backend seed
    const before = await readFile(path.join(ep0, "query.clip.ldt"));
    const out2 = path.join(dir, "out2");
    await exportAllEpisodes({ datasetRoot: dir, outDir: out2, backend: new MockBackend(7n) });
    const again = await readFile(path.join(out2, "episodes", "ep0", "query.clip.ldt"));
    assert.ok(before.equals(again));
  } finally {
    await rm(dir, { recursive: true });
  }
});

test("text embeddings export unit-norm and load in the consumer", async () => {
  const dir = await mkdtemp(path.join(os.tmpdir(), "text-"));
  try {
    const fixture = path.join(dir, "fixture.json");
    const prompts = [
      "a clean origami crafted square. It is red and boxy.",
      "a clean origami crafted square. It has four crisp corners.",
    ];
    await writeFile(fixture, JSON.stringify({
      class: "crafted square", dataset: "demo", model: "stub", n: 2, prompts,
    }));
    const files = await exportTextEmbeddings(new MockBackend(7n), fixture, path.join(dir, "emb"));
    assert.equal(files.length, 4); // n attributes + template + background

    for (const file of files) {
      const parsed = await readTensor(file);
      let norm = 0;
      for (const v of parsed.data) norm += v * v;
      assert.ok(Math.abs(Math.sqrt(norm) - 1.0) < 1e-4, `${file} not unit norm`);
      assert.equal(parsed.meta.kind, "text_embedding");
    }
    execFileSync("python3", ["-m", "ldag", "validate", ...files], { encoding: "utf-8" });

    const roles = python(`
from ldag.providers import load_feature_file
import glob
for f in sorted(glob.glob(${JSON.stringify(path.join(dir, "emb", "*.ldt"))})):
    e = load_feature_file(f)
    print(e.role, abs(float((e.vector ** 2).sum()) ** 0.5 - 1.0) < 1e-4)
`);
    assert.match(roles, /foreground-attribute True/);
    assert.match(roles, /foreground-template True/);
    assert.match(roles, /background True/);
  } finally {
    await rm(dir, { recursive: true });
  }
});

test("exported attribute fixtures load in the consumer's offline mode", async () => {
  const dir = await mkdtemp(path.join(os.tmpdir(), "attr-"));
  try {
    // write a fixture through the exporter's cache path shape
    const { fixturePath } = await import("../src/chat.js");
    const file = fixturePath(dir, "demo-2", "bus", 2, "stub-model");
    const prompts = [
      "a clean origami bus. It is long and yellow.",
      "a clean origami bus. It has many windows.",
    ];
    await mkdir(path.dirname(file), { recursive: true });
    await writeFile(file, JSON.stringify({
      class: "bus", dataset: "demo-2", model: "stub-model", n: 2, prompts,
    }, null, 2));

    const loaded = python(`
from ldag.attributes import ChatEndpointConfig, fetch_attributes
prompts = fetch_attributes(
    "ignored", ChatEndpointConfig(url="", model="stub-model"),
    dataset="demo-2", class_name="bus", n=2,
    fixture_dir=${JSON.stringify(dir)}, offline=True)
print(len(prompts), prompts[0].startswith("a clean origami bus. It "))
`);
    assert.match(loaded, /2 True/);
  } finally {
    await rm(dir, { recursive: true });
  }
});

test("unit-norm helper rejects the zero vector", () => {
  assert.throws(() => l2Normalize(new Float32Array(4)), /zero-norm/);
});

test("full loop: consumer evaluates a checkpoint over exported data", async () => {
  const dir = await mkdtemp(path.join(os.tmpdir(), "loop-"));
  try {
    await makeDataset(dir);
    const out = path.join(dir, "out");
    const backend = new MockBackend(7n);
    await exportAllEpisodes({ datasetRoot: dir, outDir: out, backend });

    // attribute prompts + embeddings for the exported class
    const prompts = [
      "a clean origami crafted square. It is a colored square.",
      "a clean origami crafted square. It sits on a plain background.",
    ];
    const fixtureDir = path.join(out, "fixtures");
    await mkdir(fixtureDir, { recursive: true });
    const fixture = path.join(fixtureDir, "imported.crafted-square.n2.mock.json");
    await writeFile(fixture, JSON.stringify({
      class: "crafted square", dataset: "imported", model: "mock", n: 2, prompts,
    }));
    await exportTextEmbeddings(backend, fixture, path.join(out, "attributes"));

    const report = python(`
import json
from ldag.fusion import ModelParameters
from ldag.training import TrainConfig, evaluate_files
cfg = TrainConfig(provider="files", data_path=${JSON.stringify(out)}, n=2, seed=3)
params = ModelParameters.init(64, 64, 2, seed=5)
rows, rep = evaluate_files(params, cfg)
print(json.dumps({"episodes": rep.episode_count, "classes": sorted(rep.per_class_iou)}))
`);
    const parsed = JSON.parse(report.trim().split("\n").at(-1)!);
    assert.equal(parsed.episodes, 2);
    assert.deepEqual(parsed.classes, ["crafted square"]);
  } finally {
    await rm(dir, { recursive: true });
  }
});
