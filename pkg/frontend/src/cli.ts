#!/usr/bin/env node
import yargs from 'yargs';
import { hideBin } from 'yargs/helpers';
import { buildPanels, writeFigure } from './figure.js';
import { discoverRuns, groupRuns } from './runs.js';

export interface PlotArgs {
  glob: string;
  metric: string;
  window: number;
  out: string;
}

export async function runPlot(args: PlotArgs): Promise<void> {
  const records = discoverRuns(args.glob);
  if (records.length === 0) {
    throw new Error(`no metrics files match ${args.glob}`);
  }
  const groups = groupRuns(records);
  const opts = { metric: args.metric, window: args.window };
  const panels = buildPanels(groups, opts);
  await writeFigure(panels, opts, args.out);
  const nSeeds = records.length;
  console.log(`wrote ${args.out}: ${panels.length} panel(s), ${groups.length} strategy group(s), ${nSeeds} run(s)`);
}

export function main(argv: string[]): Promise<unknown> {
  return yargs(argv)
    .command(
      ['plot', '$0'],
      'render learning curves from metrics.csv runs',
      (y) =>
        y
          .option('glob', { type: 'string', demandOption: true, describe: "e.g. 'runs/*/metrics.csv'" })
          .option('metric', { type: 'string', default: 'episode_reward_sparse' })
          .option('window', { type: 'number', default: 100, describe: 'rolling-mean window (1 = raw)' })
          .option('out', { type: 'string', demandOption: true, describe: 'output .svg or .png' }),
      async (args) => {
        await runPlot({ glob: args.glob, metric: args.metric, window: args.window, out: args.out });
      },
    )
    .strict()
    .fail((msg, err) => {
      console.error(err?.message ?? msg);
      process.exit(1);
    })
    .parseAsync();
}

const invokedDirectly =
  process.argv[1] !== undefined && import.meta.url.endsWith(process.argv[1].split('/').pop() as string);
if (invokedDirectly) {
  main(hideBin(process.argv));
}
