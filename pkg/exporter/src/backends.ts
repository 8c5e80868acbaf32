/**
 * Encoder backends behind one interface.
 *
 * The real backend drives frozen CLIP (ViT-B/16) and SAM (ViT-H) checkpoints
 * through @huggingface/transformers when that optional dependency plus its
 * weights are available. The mock backend produces deterministic seeded
 * features with the same shapes and invariants so every downstream format
 * path is testable offline. Both emit tokens WITH a leading class token for
 * the image-text encoder; the export pipeline removes it.
 */

import { SplitMix64, deriveSeed } from "./rng.js";

export interface ImageTokens {
  /** [cls, patch_0, ..., patch_{gh*gw-1}] x dim, row-major. */
  tokens: Float32Array;
  tokenCount: number;
  dim: number;
  gridH: number;
  gridW: number;
}

export interface ImageGrid {
  features: Float32Array; // dim x gridH x gridW, channel-major
  dim: number;
  gridH: number;
  gridW: number;
}

export interface EncoderBackend {
  readonly id: string;
  readonly clipModel: string;
  readonly samModel: string;
  encodeImageClip(image: Float32Array, height: number, width: number): Promise<ImageTokens>;
  encodeImageSam(image: Float32Array, height: number, width: number): Promise<ImageGrid>;
  encodeText(prompt: string): Promise<Float32Array>;
}

const MOCK_DIM = 64;
const MOCK_PATCH = 16;

/** Deterministic stand-in: seeded random projections of image patches. */
export class MockBackend implements EncoderBackend {
  readonly id = "mock";
  readonly clipModel = "mock-clip-vit";
  readonly samModel = "mock-sam-vit";
  private seed: bigint;

  constructor(seed: bigint = 7n) {
    this.seed = seed;
  }

  private projection(label: string, rows: number, cols: number): Float64Array {
    const rng = new SplitMix64(deriveSeed(this.seed, label));
    const m = rng.gaussians(rows * cols);
    const scale = 1.0 / Math.sqrt(cols);
    for (let i = 0; i < m.length; i++) m[i] *= scale;
    return m;
  }

  private patchFeatures(
    image: Float32Array,
    height: number,
    width: number,
    label: string,
  ): ImageGrid {
    const gh = Math.floor(height / MOCK_PATCH);
    const gw = Math.floor(width / MOCK_PATCH);
    const patchDim = 3 * MOCK_PATCH * MOCK_PATCH;
    const w = this.projection(label, MOCK_DIM, patchDim);
    const features = new Float32Array(MOCK_DIM * gh * gw);
    for (let gy = 0; gy < gh; gy++) {
      for (let gx = 0; gx < gw; gx++) {
        for (let m = 0; m < MOCK_DIM; m++) {
          let acc = 0.0;
          let k = 0;
          for (let c = 0; c < 3; c++) {
            for (let py = 0; py < MOCK_PATCH; py++) {
              for (let px = 0; px < MOCK_PATCH; px++) {
                const y = gy * MOCK_PATCH + py;
                const x = gx * MOCK_PATCH + px;
                acc += w[m * patchDim + k] * image[c * height * width + y * width + x];
                k++;
              }
            }
          }
          features[m * gh * gw + gy * gw + gx] = acc;
        }
      }
    }
    return { features, dim: MOCK_DIM, gridH: gh, gridW: gw };
  }

  async encodeImageClip(image: Float32Array, height: number, width: number): Promise<ImageTokens> {
    const grid = this.patchFeatures(image, height, width, "mock/clip");
    const count = grid.gridH * grid.gridW;
    const tokens = new Float32Array((count + 1) * grid.dim);
    // a deterministic class token, removed downstream by the export pipeline
    const clsRng = new SplitMix64(deriveSeed(this.seed, "mock/clip/cls"));
    for (let d = 0; d < grid.dim; d++) tokens[d] = clsRng.nextGaussian();
    for (let t = 0; t < count; t++) {
      for (let d = 0; d < grid.dim; d++) {
        tokens[(t + 1) * grid.dim + d] = grid.features[d * count + t];
      }
    }
    return { tokens, tokenCount: count + 1, dim: grid.dim, gridH: grid.gridH, gridW: grid.gridW };
  }

  async encodeImageSam(image: Float32Array, height: number, width: number): Promise<ImageGrid> {
    return this.patchFeatures(image, height, width, "mock/sam");
  }

  async encodeText(prompt: string): Promise<Float32Array> {
    const tokens = prompt.toLowerCase().split(/[^0-9a-z]+/).filter((t) => t.length > 0);
    if (tokens.length === 0) throw new Error(`prompt ${JSON.stringify(prompt)} has no tokens`);
    const acc = new Float64Array(MOCK_DIM);
    for (const token of tokens) {
      const h = fnv(token) ^ deriveSeed(this.seed, "mock/text");
      const z = new SplitMix64(h).gaussians(MOCK_DIM);
      let norm = 0.0;
      for (const v of z) norm += v * v;
      norm = Math.sqrt(norm);
      for (let d = 0; d < MOCK_DIM; d++) acc[d] += z[d] / norm;
    }
    return new Float32Array(acc);
  }
}

function fnv(text: string): bigint {
  let h = 0xcbf29ce484222325n;
  for (const byte of new TextEncoder().encode(text)) {
    h ^= BigInt(byte);
    h = (h * 0x100000001b3n) & ((1n << 64n) - 1n);
  }
  return h;
}

/**
 * Real checkpoints via @huggingface/transformers (optional dependency).
 * The module name is computed so the build does not require the package.
 */
export async function loadRealBackend(
  clipModel = "Xenova/clip-vit-base-patch16",
  samModel = "Xenova/sam-vit-base",
): Promise<EncoderBackend> {
  const moduleName = "@huggingface/transformers";
  let hf: any;
  try {
    hf = await import(moduleName);
  } catch (err) {
    throw new Error(
      `real backend needs the optional dependency ${moduleName} ` +
      `(npm install ${moduleName}) plus downloaded checkpoints: ${err}`,
    );
  }
  const processor = await hf.AutoProcessor.from_pretrained(clipModel);
  const clipVision = await hf.CLIPVisionModelWithProjection.from_pretrained(clipModel);
  const tokenizer = await hf.AutoTokenizer.from_pretrained(clipModel);
  const clipText = await hf.CLIPTextModelWithProjection.from_pretrained(clipModel);
  const samProcessor = await hf.AutoProcessor.from_pretrained(samModel);
  const sam = await hf.SamModel.from_pretrained(samModel);

  return {
    id: "transformers.js",
    clipModel,
    samModel,
    async encodeImageClip(image, height, width) {
      const raw = toRawImage(hf, image, height, width);
      const inputs = await processor(raw);
      const out = await clipVision(inputs, { output_hidden_states: true });
      // final hidden state: [1, 1 + gh*gw, dim], class token first
      const hidden = out.last_hidden_state ?? out.hidden_states.at(-1);
      const [, tokenCount, dim] = hidden.dims;
      const side = Math.round(Math.sqrt(tokenCount - 1));
      return {
        tokens: Float32Array.from(hidden.data),
        tokenCount,
        dim,
        gridH: side,
        gridW: side,
      };
    },
    async encodeImageSam(image, height, width) {
      const raw = toRawImage(hf, image, height, width);
      const inputs = await samProcessor(raw);
      const out = await sam.get_image_embeddings(inputs);
      const [, dim, gh, gw] = out.image_embeddings.dims;
      return { features: Float32Array.from(out.image_embeddings.data), dim, gridH: gh, gridW: gw };
    },
    async encodeText(prompt) {
      const inputs = tokenizer(prompt, { padding: true, truncation: true });
      const out = await clipText(inputs);
      return Float32Array.from(out.text_embeds.data);
    },
  };
}

function toRawImage(hf: any, image: Float32Array, height: number, width: number) {
  const rgba = new Uint8ClampedArray(height * width * 4);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      for (let c = 0; c < 3; c++) {
        rgba[(y * width + x) * 4 + c] = Math.round(image[c * height * width + y * width + x] * 255);
      }
      rgba[(y * width + x) * 4 + 3] = 255;
    }
  }
  return new hf.RawImage(rgba, width, height, 4);
}
