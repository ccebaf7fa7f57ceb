/**
 * CLI: extract embeddings from a local dataset copy.
 *
 *   node dist/cli.js --dataset cifar100 --data-dir ./cifar-100-binary \
 *     --backbone pretrained --out-dir ./embeddings
 *
 * Backbones: "pretrained[:modelId]" (needs @huggingface/transformers and
 * model weights), or "projection[:dim[:seed]]" for the offline stand-in.
 */

import { mkdirSync } from 'node:fs'
import { join } from 'node:path'
import { pretrainedBackbone, projectionBackbone, type Backbone } from './backbone.js'
import { extract } from './extract.js'

interface Args {
  dataset: 'cifar10' | 'cifar100' | 'tinyimagenet'
  dataDir: string
  outDir: string
  backbone: string
  batchSize: number
  device?: string
}

function parseArgs(argv: string[]): Args {
  const args: Record<string, string> = {}
  for (let i = 0; i < argv.length; i++) {
    const key = argv[i]
    if (!key.startsWith('--')) {
      throw new Error(`unexpected argument ${key}`)
    }
    const value = argv[i + 1]
    if (value === undefined || value.startsWith('--')) {
      throw new Error(`flag ${key} needs a value`)
    }
    args[key.slice(2)] = value
    i++
  }
  const dataset = args['dataset']
  if (dataset !== 'cifar10' && dataset !== 'cifar100' && dataset !== 'tinyimagenet') {
    throw new Error('--dataset must be cifar10, cifar100, or tinyimagenet')
  }
  if (!args['data-dir']) throw new Error('--data-dir is required')
  if (!args['out-dir']) throw new Error('--out-dir is required')
  return {
    dataset,
    dataDir: args['data-dir'],
    outDir: args['out-dir'],
    backbone: args['backbone'] ?? 'pretrained',
    batchSize: Number(args['batch-size'] ?? 64),
    device: args['device'],
  }
}

async function makeBackbone(spec: string, device?: string): Promise<Backbone> {
  const [kind, ...rest] = spec.split(':')
  if (kind === 'pretrained') {
    return pretrainedBackbone({ modelId: rest[0], device })
  }
  if (kind === 'projection') {
    const dim = rest[0] ? Number(rest[0]) : 64
    const seed = rest[1] ? BigInt(rest[1]) : 7n
    return projectionBackbone(dim, seed)
  }
  throw new Error(`unknown backbone ${spec}`)
}

export async function main(argv = process.argv.slice(2)): Promise<number> {
  let args: Args
  try {
    args = parseArgs(argv)
  } catch (err) {
    console.error(`error: ${(err as Error).message}`)
    return 2
  }
  try {
    const backbone = await makeBackbone(args.backbone, args.device)
    mkdirSync(args.outDir, { recursive: true })
    console.log(
      `extracting ${args.dataset} with ${backbone.name} ` +
        `(dim ${backbone.dim}, batch ${args.batchSize})`,
    )
    let lastPct = -1
    const summary = await extract({
      dataset: args.dataset,
      dataDir: args.dataDir,
      backbone,
      batchSize: args.batchSize,
      outTrain: join(args.outDir, `${args.dataset}_train.emb`),
      outTest: join(args.outDir, `${args.dataset}_test.emb`),
      manifestPath: join(args.outDir, `${args.dataset}_manifest.json`),
      onProgress: (split, done, total) => {
        const pct = Math.floor((100 * done) / total)
        if (pct !== lastPct) {
          process.stdout.write(`\r${split}: ${done}/${total} (${pct}%)   `)
          lastPct = pct
        }
        if (done === total) process.stdout.write('\n')
      },
    })
    console.log(
      `done: ${summary.trainCount} train + ${summary.testCount} test embeddings, ` +
        `${summary.classes} classes, dim ${summary.dim}`,
    )
    return 0
  } catch (err) {
    console.error(`error: ${(err as Error).message}`)
    return 1
  }
}

const isDirectRun =
  process.argv[1] !== undefined && import.meta.url.endsWith(process.argv[1].split('/').pop()!)
if (isDirectRun) {
  main().then(code => {
    process.exitCode = code
  })
}
