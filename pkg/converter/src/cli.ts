#!/usr/bin/env node
import yargs from 'yargs';
import { hideBin } from 'yargs/helpers';
import { convertToFile } from './convert.js';
import type { ArchitectureName } from './convert.js';
import { totalParameters } from './container.js';
import { verifyParity } from './verify.js';

await yargs(hideBin(process.argv))
  .scriptName('aerialcnn-convert')
  .command(
    'convert',
    'build a seeded source model and write its weight container',
    y =>
      y
        .option('arch', { choices: ['vgg16', 'mobilenet_v2'] as const, demandOption: true })
        .option('out', { type: 'string', demandOption: true })
        .option('seed', { type: 'number', default: 0 }),
    args => {
      const container = convertToFile(args.arch as ArchitectureName, args.out, args.seed);
      console.log(`wrote ${args.out}`);
      console.log(`architecture: ${container.architectureId}`);
      console.log(`entries: ${container.entries.length}`);
      console.log(`parameters: ${totalParameters(container).toLocaleString('en-US')}`);
    }
  )
  .command(
    'verify',
    'compare engine outputs for a converted container against the source model',
    y =>
      y
        .option('container', { type: 'string', demandOption: true })
        .option('images', { type: 'string', demandOption: true })
        .option('tolerance', { type: 'number', default: 1e-3 })
        .option('seed', { type: 'number', default: 0 }),
    async args => {
      const report = await verifyParity(args.container, args.images, {
        tolerance: args.tolerance,
        seed: args.seed,
      });
      for (const image of report.images) {
        const mark = image.argmaxAgrees ? 'argmax ok' : 'ARGMAX MISMATCH';
        console.log(`${image.path}  max abs diff ${image.maxAbsDiff.toExponential(3)}  ${mark}`);
      }
      console.log(
        `max abs diff ${report.maxAbsDiff.toExponential(3)} (tolerance ${report.tolerance}), ` +
          `argmax ${report.argmaxMatches}/${report.images.length}, ${report.seconds.toFixed(1)}s`
      );
      if (!report.ok) {
        console.error('parity check failed');
        process.exitCode = 1;
      }
    }
  )
  .demandCommand(1)
  .strict()
  .parseAsync();
