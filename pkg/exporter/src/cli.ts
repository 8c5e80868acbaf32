/**
 * Exporter CLI.
 *
 *   export-episodes --dataset <dir> --out <dir> [--backend mock|real] [--seed N]
 *   export-text     --fixture <json> --out <dir> [--backend mock|real]
 *   export-attributes --classes a,b,c --target <class> --n 5 --out <dir>
 *                     [--dataset name] [--offline]
 *
 * Chat endpoint config comes from LDAG_LLM_URL / LDAG_LLM_MODEL / LDAG_LLM_KEY.
 */

import { exit } from "node:process";

import { EncoderBackend, MockBackend, loadRealBackend } from "./backends.js";
import { chatConfigFromEnv, fetchAttributes } from "./chat.js";
import { exportAllEpisodes, exportTextEmbeddings } from "./exportJob.js";

function parseArgs(argv: string[]): { command: string; options: Map<string, string> } {
  const [command, ...rest] = argv;
  const options = new Map<string, string>();
  for (let i = 0; i < rest.length; i++) {
    if (!rest[i].startsWith("--")) throw new Error(`unexpected argument ${rest[i]}`);
    const key = rest[i].slice(2);
    if (i + 1 < rest.length && !rest[i + 1].startsWith("--")) {
      options.set(key, rest[++i]);
    } else {
      options.set(key, "true");
    }
  }
  return { command: command ?? "", options };
}

async function pickBackend(options: Map<string, string>): Promise<EncoderBackend> {
  const name = options.get("backend") ?? "mock";
  if (name === "mock") return new MockBackend(BigInt(options.get("seed") ?? "7"));
  if (name === "real") return loadRealBackend(options.get("clip-model"), options.get("sam-model"));
  throw new Error(`unknown backend ${name}`);
}

async function main(): Promise<number> {
  const { command, options } = parseArgs(process.argv.slice(2));
  switch (command) {
    case "export-episodes": {
      const backend = await pickBackend(options);
      const exported = await exportAllEpisodes({
        datasetRoot: required(options, "dataset"),
        outDir: required(options, "out"),
        backend,
      });
      console.log(`exported ${exported.length} episodes with backend ${backend.id}`);
      return 0;
    }
    case "export-text": {
      const backend = await pickBackend(options);
      const files = await exportTextEmbeddings(
        backend,
        required(options, "fixture"),
        required(options, "out"),
      );
      console.log(`wrote ${files.length} text embeddings`);
      return 0;
    }
    case "export-attributes": {
      const classes = required(options, "classes").split(",");
      const target = required(options, "target");
      const n = parseInt(options.get("n") ?? "5", 10);
      const result = await fetchAttributes(
        chatConfigFromEnv(),
        classes,
        target,
        n,
        required(options, "out"),
        options.get("dataset") ?? "export",
        options.has("offline"),
      );
      for (const prompt of result.prompts) console.log(prompt);
      console.log(`# source: ${result.fromCache ? "fixture cache" : "live endpoint"}; ` +
        `rejected lines: ${result.rejectedLines}`);
      return 0;
    }
    default:
      console.error(
        "usage: cli.js <export-episodes|export-text|export-attributes> [--options]",
      );
      return 2;
  }
}

function required(options: Map<string, string>, key: string): string {
  const value = options.get(key);
  if (!value) throw new Error(`missing required option --${key}`);
  return value;
}

main().then(exit).catch((err) => {
  console.error(`error: ${err.message ?? err}`);
  exit(1);
});
