/**
 * Loaders for the standard image classification datasets, kept in each
 * dataset's canonical record order so extraction output is reproducible.
 *
 * All loaders return raw uint8 RGB pixels in HWC layout; resizing and
 * normalization are the backbone's business.
 */

import { readFileSync, readdirSync, existsSync } from 'node:fs'
import { createRequire } from 'node:module'
import { join } from 'node:path'

const require = createRequire(import.meta.url)

export interface ImageSet {
  /** n * height * width * 3 bytes, RGB, HWC per image */
  pixels: Uint8Array
  labels: Uint32Array
  width: number
  height: number
  count: number
  classNames?: string[]
}

export interface DatasetPair {
  train: ImageSet
  test: ImageSet
  name: string
}

const CIFAR_SIDE = 32
const CIFAR_PIXELS = CIFAR_SIDE * CIFAR_SIDE

/** channel-major (RRR..GGG..BBB) to interleaved HWC */
function planarToHwc(src: Uint8Array, dst: Uint8Array, dstOffset: number): void {
  for (let p = 0; p < CIFAR_PIXELS; p++) {
    dst[dstOffset + 3 * p] = src[p]
    dst[dstOffset + 3 * p + 1] = src[CIFAR_PIXELS + p]
    dst[dstOffset + 3 * p + 2] = src[2 * CIFAR_PIXELS + p]
  }
}

function readCifarRecords(
  files: string[],
  labelBytes: number,
  labelIndex: number,
): ImageSet {
  const recordSize = labelBytes + 3 * CIFAR_PIXELS
  let total = 0
  const buffers: Buffer[] = []
  for (const file of files) {
    const buf = readFileSync(file)
    if (buf.length % recordSize !== 0) {
      throw new Error(`${file}: size ${buf.length} is not a multiple of ${recordSize}`)
    }
    total += buf.length / recordSize
    buffers.push(buf)
  }
  const pixels = new Uint8Array(total * 3 * CIFAR_PIXELS)
  const labels = new Uint32Array(total)
  let out = 0
  for (const buf of buffers) {
    for (let off = 0; off < buf.length; off += recordSize) {
      labels[out] = buf[off + labelIndex]
      planarToHwc(
        buf.subarray(off + labelBytes, off + recordSize),
        pixels,
        out * 3 * CIFAR_PIXELS,
      )
      out++
    }
  }
  return { pixels, labels, width: CIFAR_SIDE, height: CIFAR_SIDE, count: total }
}

function requireFiles(dir: string, names: string[]): string[] {
  const paths = names.map(n => join(dir, n))
  for (const p of paths) {
    if (!existsSync(p)) {
      throw new Error(`dataset file not found: ${p}`)
    }
  }
  return paths
}

export function loadCifar10(dir: string): DatasetPair {
  const trainFiles = requireFiles(
    dir,
    [1, 2, 3, 4, 5].map(i => `data_batch_${i}.bin`),
  )
  const testFiles = requireFiles(dir, ['test_batch.bin'])
  const names = maybeReadLines(join(dir, 'batches.meta.txt'))
  const train = readCifarRecords(trainFiles, 1, 0)
  const test = readCifarRecords(testFiles, 1, 0)
  if (names) {
    train.classNames = names
    test.classNames = names
  }
  return { train, test, name: 'cifar10' }
}

export function loadCifar100(dir: string): DatasetPair {
  // records carry a coarse then a fine label byte; we keep the fine label
  const train = readCifarRecords(requireFiles(dir, ['train.bin']), 2, 1)
  const test = readCifarRecords(requireFiles(dir, ['test.bin']), 2, 1)
  const names = maybeReadLines(join(dir, 'fine_label_names.txt'))
  if (names) {
    train.classNames = names
    test.classNames = names
  }
  return { train, test, name: 'cifar100' }
}

function maybeReadLines(path: string): string[] | undefined {
  if (!existsSync(path)) return undefined
  return readFileSync(path, 'utf-8')
    .split('\n')
    .map(s => s.trim())
    .filter(Boolean)
}

const TIN_SIDE = 64

/**
 * TinyImageNet directory layout: train/<wnid>/images/*.JPEG plus
 * val/images/*.JPEG with val/val_annotations.txt. Test labels are not
 * published, so the validation split serves as the test set. Class ids are
 * assigned by sorting the wnids, matching wnids.txt order when present.
 */
export function loadTinyImagenet(dir: string): DatasetPair {
  const trainDir = join(dir, 'train')
  if (!existsSync(trainDir)) {
    throw new Error(`dataset directory not found: ${trainDir}`)
  }
  const listed = maybeReadLines(join(dir, 'wnids.txt'))
  const wnids = listed ?? readdirSync(trainDir).sort()
  const classOf = new Map<string, number>()
  wnids.forEach((w, i) => classOf.set(w, i))

  const decode = loadJpegDecoder()

  const trainEntries: Array<{ file: string; label: number }> = []
  for (const wnid of wnids) {
    const imagesDir = join(trainDir, wnid, 'images')
    const label = classOf.get(wnid)!
    for (const file of readdirSync(imagesDir).sort()) {
      trainEntries.push({ file: join(imagesDir, file), label })
    }
  }

  const valAnnotations = readFileSync(join(dir, 'val', 'val_annotations.txt'), 'utf-8')
  const valEntries: Array<{ file: string; label: number }> = []
  for (const line of valAnnotations.split('\n')) {
    const cols = line.trim().split('\t')
    if (cols.length < 2) continue
    const label = classOf.get(cols[1])
    if (label === undefined) {
      throw new Error(`val_annotations.txt names unknown class ${cols[1]}`)
    }
    valEntries.push({ file: join(dir, 'val', 'images', cols[0]), label })
  }
  valEntries.sort((a, b) => (a.file < b.file ? -1 : a.file > b.file ? 1 : 0))

  const load = (entries: Array<{ file: string; label: number }>): ImageSet => {
    const pixels = new Uint8Array(entries.length * TIN_SIDE * TIN_SIDE * 3)
    const labels = new Uint32Array(entries.length)
    entries.forEach((entry, i) => {
      labels[i] = entry.label
      decodeJpegInto(decode, entry.file, pixels, i * TIN_SIDE * TIN_SIDE * 3)
    })
    return {
      pixels,
      labels,
      width: TIN_SIDE,
      height: TIN_SIDE,
      count: entries.length,
      classNames: wnids,
    }
  }
  return { train: load(trainEntries), test: load(valEntries), name: 'tinyimagenet' }
}

type JpegDecode = (data: Buffer, opts: { formatAsRGBA: boolean }) => {
  width: number
  height: number
  data: Uint8Array
}

function loadJpegDecoder(): JpegDecode {
  // jpeg-js is CommonJS; createRequire keeps it a plain load under ESM
  const mod = require('jpeg-js') as { decode: JpegDecode }
  return mod.decode
}

function decodeJpegInto(
  decode: JpegDecode,
  file: string,
  dst: Uint8Array,
  offset: number,
): void {
  const decoded = decode(readFileSync(file), { formatAsRGBA: false })
  if (decoded.width !== TIN_SIDE || decoded.height !== TIN_SIDE) {
    throw new Error(
      `${file}: expected ${TIN_SIDE}x${TIN_SIDE}, got ${decoded.width}x${decoded.height}`,
    )
  }
  dst.set(decoded.data, offset)
}

export function loadDataset(name: string, dir: string): DatasetPair {
  switch (name) {
    case 'cifar10':
      return loadCifar10(dir)
    case 'cifar100':
      return loadCifar100(dir)
    case 'tinyimagenet':
      return loadTinyImagenet(dir)
    default:
      throw new Error(`unknown dataset ${name} (expected cifar10, cifar100, tinyimagenet)`)
  }
}

export function classCounts(labels: Uint32Array): Map<number, number> {
  const counts = new Map<number, number>()
  for (const label of labels) {
    counts.set(label, (counts.get(label) ?? 0) + 1)
  }
  return counts
}
