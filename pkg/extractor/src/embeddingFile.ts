/**
 * Embedding file format shared with the streaming classifier.
 *
 * Layout (all little-endian):
 *   magic   4 bytes "ALMD"
 *   version u32 (currently 1)
 *   dim     u32 (> 0)
 *   count   u64
 *   records count x { label: u32, vector: dim x f32 }
 *   crc     u32 (CRC-32 over every preceding byte)
 */

import { crc32 } from 'node:zlib'
import { readFileSync, writeFileSync, renameSync, rmSync } from 'node:fs'
import { dirname, join } from 'node:path'
import { randomBytes } from 'node:crypto'

export const EMBEDDING_MAGIC = 'ALMD'
export const EMBEDDING_VERSION = 1

export interface EmbeddingSet {
  dim: number
  /** flattened row-major, length = labels.length * dim */
  vectors: Float32Array
  labels: Uint32Array
}

const HEADER_SIZE = 4 + 4 + 4 + 8

export function encodeEmbeddings(set: EmbeddingSet): Buffer {
  const { dim, vectors, labels } = set
  if (dim <= 0) {
    throw new Error(`embedding dimension must be positive, got ${dim}`)
  }
  if (vectors.length !== labels.length * dim) {
    throw new Error(
      `vector buffer has ${vectors.length} floats, expected ${labels.length} x ${dim}`,
    )
  }
  const count = labels.length
  const recordSize = 4 + 4 * dim
  const buf = Buffer.alloc(HEADER_SIZE + count * recordSize + 4)
  buf.write(EMBEDDING_MAGIC, 0, 'ascii')
  buf.writeUInt32LE(EMBEDDING_VERSION, 4)
  buf.writeUInt32LE(dim, 8)
  buf.writeBigUInt64LE(BigInt(count), 12)

  let offset = HEADER_SIZE
  for (let i = 0; i < count; i++) {
    buf.writeUInt32LE(labels[i], offset)
    offset += 4
    for (let j = 0; j < dim; j++) {
      buf.writeFloatLE(vectors[i * dim + j], offset)
      offset += 4
    }
  }
  buf.writeUInt32LE(crc32(buf.subarray(0, offset)) >>> 0, offset)
  return buf
}

export function writeEmbeddings(path: string, set: EmbeddingSet): void {
  const payload = encodeEmbeddings(set)
  const tmp = join(dirname(path), `.${randomBytes(6).toString('hex')}.tmp`)
  try {
    writeFileSync(tmp, payload)
    renameSync(tmp, path)
  } catch (err) {
    rmSync(tmp, { force: true })
    throw err
  }
}

export function decodeEmbeddings(buf: Buffer, source = 'buffer'): EmbeddingSet {
  if (buf.length < HEADER_SIZE) {
    throw new Error(`${source}: too short for an embedding header`)
  }
  if (buf.toString('ascii', 0, 4) !== EMBEDDING_MAGIC) {
    throw new Error(`${source}: not an embedding file`)
  }
  const version = buf.readUInt32LE(4)
  if (version !== EMBEDDING_VERSION) {
    throw new Error(`${source}: unsupported format version ${version}`)
  }
  const dim = buf.readUInt32LE(8)
  if (dim === 0) {
    throw new Error(`${source}: declared dimension is zero`)
  }
  const count = Number(buf.readBigUInt64LE(12))
  const recordSize = 4 + 4 * dim
  const expected = HEADER_SIZE + count * recordSize + 4
  if (buf.length < expected) {
    throw new Error(`${source}: ${buf.length} bytes, header implies ${expected}`)
  }
  if (buf.length > expected) {
    throw new Error(`${source}: ${buf.length - expected} trailing bytes`)
  }
  const stored = buf.readUInt32LE(expected - 4)
  const actual = crc32(buf.subarray(0, expected - 4)) >>> 0
  if (stored !== actual) {
    throw new Error(`${source}: checksum mismatch`)
  }

  const labels = new Uint32Array(count)
  const vectors = new Float32Array(count * dim)
  let offset = HEADER_SIZE
  for (let i = 0; i < count; i++) {
    labels[i] = buf.readUInt32LE(offset)
    offset += 4
    for (let j = 0; j < dim; j++) {
      vectors[i * dim + j] = buf.readFloatLE(offset)
      offset += 4
    }
  }
  return { dim, vectors, labels }
}

export function readEmbeddings(path: string): EmbeddingSet {
  return decodeEmbeddings(readFileSync(path), path)
}
