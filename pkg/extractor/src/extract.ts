/**
 * Extraction driver: dataset -> frozen backbone -> embedding file pair,
 * plus a sidecar manifest recording exactly how the files were produced.
 */

import { writeFileSync } from 'node:fs'
import type { Backbone } from './backbone.js'
import { classCounts, loadDataset, type ImageSet } from './datasets.js'
import { writeEmbeddings, type EmbeddingSet } from './embeddingFile.js'

export interface ExtractionJob {
  dataset: 'cifar10' | 'cifar100' | 'tinyimagenet'
  dataDir: string
  backbone: Backbone
  batchSize: number
  outTrain: string
  outTest: string
  manifestPath?: string
  onProgress?: (split: string, done: number, total: number) => void
}

export interface ExtractionSummary {
  dataset: string
  backbone: string
  dim: number
  trainCount: number
  testCount: number
  classes: number
}

export async function embedImageSet(
  images: ImageSet,
  backbone: Backbone,
  batchSize: number,
  onProgress?: (done: number, total: number) => void,
): Promise<EmbeddingSet> {
  if (batchSize < 1) {
    throw new Error(`batch size must be positive, got ${batchSize}`)
  }
  const vectors = new Float32Array(images.count * backbone.dim)
  for (let start = 0; start < images.count; start += batchSize) {
    const end = Math.min(start + batchSize, images.count)
    const chunk = await backbone.embedBatch(images, start, end)
    if (chunk.length !== (end - start) * backbone.dim) {
      throw new Error(
        `backbone returned ${chunk.length} floats for ${end - start} images ` +
          `of width ${backbone.dim}`,
      )
    }
    vectors.set(chunk, start * backbone.dim)
    onProgress?.(end, images.count)
  }
  return { dim: backbone.dim, vectors, labels: images.labels }
}

export async function extract(job: ExtractionJob): Promise<ExtractionSummary> {
  const pair = loadDataset(job.dataset, job.dataDir)

  const trainSet = await embedImageSet(pair.train, job.backbone, job.batchSize, (d, t) =>
    job.onProgress?.('train', d, t),
  )
  writeEmbeddings(job.outTrain, trainSet)

  const testSet = await embedImageSet(pair.test, job.backbone, job.batchSize, (d, t) =>
    job.onProgress?.('test', d, t),
  )
  writeEmbeddings(job.outTest, testSet)

  const counts = classCounts(pair.train.labels)
  const manifest = {
    dataset: pair.name,
    backbone: job.backbone.name,
    dim: job.backbone.dim,
    input_size: job.backbone.inputSize,
    resize: 'bilinear, backbone native resolution, no augmentation',
    source_size: { width: pair.train.width, height: pair.train.height },
    train: { path: job.outTrain, count: pair.train.count },
    test: { path: job.outTest, count: pair.test.count },
    classes: counts.size,
    per_class_train: Object.fromEntries(
      [...counts.entries()].sort((a, b) => a[0] - b[0]),
    ),
    class_names: pair.train.classNames ?? null,
  }
  if (job.manifestPath) {
    writeFileSync(job.manifestPath, JSON.stringify(manifest, null, 2) + '\n')
  }
  return {
    dataset: pair.name,
    backbone: job.backbone.name,
    dim: job.backbone.dim,
    trainCount: pair.train.count,
    testCount: pair.test.count,
    classes: counts.size,
  }
}
