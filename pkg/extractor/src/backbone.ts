/**
 * Vision backbones. A backbone is frozen: it maps a batch of raw images to
 * one embedding per image deterministically (inference mode, no
 * augmentation), so running the same extraction twice produces identical
 * files.
 *
 * Two implementations:
 *  - `pretrainedBackbone` wraps an image-feature-extraction pipeline from
 *    @huggingface/transformers (optional dependency; weights are fetched on
 *    first use or read from a local cache).
 *  - `projectionBackbone` is a self-contained stand-in: bilinear resize,
 *    normalize, and a seeded Gaussian random projection. It exercises the
 *    full extraction pipeline offline but carries no semantic information;
 *    do not expect classifier-grade embeddings from it.
 */

import type { ImageSet } from './datasets.js'

export interface Backbone {
  name: string
  dim: number
  /** side length images are resized to before embedding */
  inputSize: number
  embedBatch(images: ImageSet, start: number, end: number): Promise<Float32Array>
}

/** splitmix64, enough randomness for a fixed projection matrix */
function seededFloats(seed: bigint, count: number): Float64Array {
  const out = new Float64Array(count)
  let state = seed & 0xffffffffffffffffn
  const mask = 0xffffffffffffffffn
  for (let i = 0; i < count; i += 2) {
    state = (state + 0x9e3779b97f4a7c15n) & mask
    let z = state
    z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & mask
    z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & mask
    z = z ^ (z >> 31n)
    // Box-Muller from two 26/27-bit uniforms
    const u1 = (Number(z >> 38n) + 0.5) / 2 ** 26
    const u2 = (Number(z & 0x7ffffffn) + 0.5) / 2 ** 27
    const r = Math.sqrt(-2 * Math.log(u1))
    out[i] = r * Math.cos(2 * Math.PI * u2)
    if (i + 1 < count) out[i + 1] = r * Math.sin(2 * Math.PI * u2)
  }
  return out
}

export function bilinearResizeRgb(
  src: Uint8Array,
  srcW: number,
  srcH: number,
  side: number,
): Float32Array {
  const out = new Float32Array(side * side * 3)
  const xScale = srcW / side
  const yScale = srcH / side
  for (let y = 0; y < side; y++) {
    const sy = Math.min((y + 0.5) * yScale - 0.5, srcH - 1)
    const y0 = Math.max(0, Math.floor(sy))
    const y1 = Math.min(srcH - 1, y0 + 1)
    const fy = sy - y0
    for (let x = 0; x < side; x++) {
      const sx = Math.min((x + 0.5) * xScale - 0.5, srcW - 1)
      const x0 = Math.max(0, Math.floor(sx))
      const x1 = Math.min(srcW - 1, x0 + 1)
      const fx = sx - x0
      for (let c = 0; c < 3; c++) {
        const p00 = src[(y0 * srcW + x0) * 3 + c]
        const p01 = src[(y0 * srcW + x1) * 3 + c]
        const p10 = src[(y1 * srcW + x0) * 3 + c]
        const p11 = src[(y1 * srcW + x1) * 3 + c]
        const top = p00 + fx * (p01 - p00)
        const bottom = p10 + fx * (p11 - p10)
        out[(y * side + x) * 3 + c] = (top + fy * (bottom - top)) / 255
      }
    }
  }
  return out
}

export function projectionBackbone(dim = 64, seed = 7n, inputSize = 32): Backbone {
  const features = inputSize * inputSize * 3
  const matrix = seededFloats(seed, features * dim)
  const scale = 1 / Math.sqrt(features)
  return {
    name: `projection-${dim}d-seed${seed}`,
    dim,
    inputSize,
    async embedBatch(images, start, end) {
      const out = new Float32Array((end - start) * dim)
      const frame = images.width * images.height * 3
      for (let i = start; i < end; i++) {
        const resized = bilinearResizeRgb(
          images.pixels.subarray(i * frame, (i + 1) * frame),
          images.width,
          images.height,
          inputSize,
        )
        const row = (i - start) * dim
        for (let j = 0; j < dim; j++) {
          let acc = 0
          for (let k = 0; k < features; k++) {
            acc += resized[k] * matrix[k * dim + j]
          }
          out[row + j] = acc * scale
        }
      }
      return out
    },
  }
}

export interface PretrainedOptions {
  /** hub id of an image feature-extraction model */
  modelId?: string
  inputSize?: number
  device?: string
}

/**
 * Wrap a transformers.js feature-extraction pipeline. The default model id
 * is the base-size self-supervised ViT with patch 14 and 768-wide
 * embeddings; its class-token output is taken as the image embedding.
 */
export async function pretrainedBackbone(options: PretrainedOptions = {}): Promise<Backbone> {
  const modelId = options.modelId ?? 'Xenova/dinov2-base'
  const inputSize = options.inputSize ?? 224
  let transformers: any
  try {
    transformers = await import('@huggingface/transformers')
  } catch {
    throw new Error(
      '@huggingface/transformers is not installed; ' +
        'run `npm install @huggingface/transformers` to use pretrained backbones',
    )
  }
  const extractor = await transformers.pipeline('image-feature-extraction', modelId, {
    device: options.device,
  })
  const dim: number = extractor.model.config.hidden_size
  return {
    name: modelId,
    dim,
    inputSize,
    async embedBatch(images, start, end) {
      const { RawImage } = transformers
      const frame = images.width * images.height * 3
      const batch = []
      for (let i = start; i < end; i++) {
        batch.push(
          new RawImage(
            images.pixels.slice(i * frame, (i + 1) * frame),
            images.width,
            images.height,
            3,
          ),
        )
      }
      const output = await extractor(batch)
      const data: Float32Array = output.data
      const perImage = data.length / (end - start)
      if (!Number.isInteger(perImage)) {
        throw new Error(`unexpected feature length ${data.length} for ${end - start} images`)
      }
      if (perImage === dim) {
        return Float32Array.from(data)
      }
      // token sequence returned: take the leading class token per image
      const tokens = perImage / dim
      if (!Number.isInteger(tokens)) {
        throw new Error(`feature length ${perImage} is not a multiple of width ${dim}`)
      }
      const out = new Float32Array((end - start) * dim)
      for (let i = 0; i < end - start; i++) {
        out.set(data.subarray(i * perImage, i * perImage + dim), i * dim)
      }
      return out
    },
  }
}
