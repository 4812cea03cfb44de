import { writeFileSync } from 'fs';
import { RunGroup } from './runs.js';
import { Series, commonGrid, interpolate, loadMetricColumn, meanTrace, rollingMean } from './series.js';

export interface FigureOptions {
  metric: string;
  window: number;
  panelWidth?: number;
  panelHeight?: number;
  gridPoints?: number;
}

export interface Trace {
  kind: 'seed' | 'mean';
  strategy: string;
  x: number[];
  y: number[];
}

export interface Panel {
  task: string;
  traces: Trace[];
}

const PALETTE = ['#1f77b4', '#d62728', '#2ca02c', '#9467bd', '#ff7f0e', '#8c564b'];

/** Smooth each seed, interpolate to a common grid, and add the mean trace. */
export function buildPanels(groups: RunGroup[], opts: FigureOptions): Panel[] {
  if (groups.length === 0) {
    throw new Error('no run groups to plot');
  }
  const byTask = new Map<string, Panel>();
  for (const group of groups) {
    let panel = byTask.get(group.task);
    if (!panel) {
      panel = { task: group.task, traces: [] };
      byTask.set(group.task, panel);
    }
    const smoothed: Series[] = group.csvPaths.map((p) => {
      const raw = loadMetricColumn(p, opts.metric);
      return { x: raw.x, y: rollingMean(raw.y, opts.window) };
    });
    const grid = commonGrid(smoothed, opts.gridPoints ?? 256);
    for (const s of smoothed) {
      panel.traces.push({ kind: 'seed', strategy: group.strategy, x: grid, y: interpolate(s, grid) });
    }
    panel.traces.push({ kind: 'mean', strategy: group.strategy, x: grid, y: meanTrace(smoothed, grid) });
  }
  return [...byTask.values()].sort((a, b) => a.task.localeCompare(b.task));
}

function niceTicks(lo: number, hi: number, count = 5): number[] {
  if (!(hi > lo)) return [lo];
  const span = hi - lo;
  const step = Math.pow(10, Math.floor(Math.log10(span / count)));
  const err = span / count / step;
  const mult = err >= 7.5 ? 10 : err >= 3.5 ? 5 : err >= 1.5 ? 2 : 1;
  const tick = mult * step;
  const ticks: number[] = [];
  for (let v = Math.ceil(lo / tick) * tick; v <= hi + 1e-12 * span; v += tick) ticks.push(v);
  return ticks;
}

const fmt = (v: number): string =>
  Math.abs(v) >= 1e5 ? `${v / 1e6}M`.replace('0.', '.') : String(Math.round(v * 1000) / 1000);

/**
 * Render panels side by side as standalone SVG. Each trace carries its data
 * in a `data-points` attribute so figures stay machine-checkable.
 */
export function renderSvg(panels: Panel[], opts: FigureOptions): string {
  const pw = opts.panelWidth ?? 420;
  const ph = opts.panelHeight ?? 300;
  const margin = { top: 34, right: 16, bottom: 46, left: 58 };
  const width = panels.length * pw;
  const height = ph;
  const strategies = [...new Set(panels.flatMap((p) => p.traces.map((t) => t.strategy)))].sort();
  const color = (s: string) => PALETTE[strategies.indexOf(s) % PALETTE.length];

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
      `viewBox="0 0 ${width} ${height}" font-family="Helvetica, Arial, sans-serif">`,
    `<rect width="${width}" height="${height}" fill="white"/>`,
  );

  panels.forEach((panel, pi) => {
    const x0 = pi * pw + margin.left;
    const y0 = margin.top;
    const innerW = pw - margin.left - margin.right;
    const innerH = ph - margin.top - margin.bottom;
    const xs = panel.traces.flatMap((t) => t.x);
    const ys = panel.traces.flatMap((t) => t.y);
    const xLo = Math.min(...xs);
    const xHi = Math.max(...xs);
    const yLo = Math.min(...ys);
    const yHi = Math.max(...ys);
    const yPad = yHi > yLo ? 0.05 * (yHi - yLo) : 1;
    const sx = (v: number) => x0 + (xHi > xLo ? ((v - xLo) / (xHi - xLo)) * innerW : innerW / 2);
    const sy = (v: number) => y0 + innerH - ((v - (yLo - yPad)) / (yHi + yPad - (yLo - yPad))) * innerH;

    parts.push(`<g class="panel" data-task="${panel.task}">`);
    parts.push(
      `<rect x="${x0}" y="${y0}" width="${innerW}" height="${innerH}" fill="none" stroke="#444"/>`,
    );
    parts.push(
      `<text x="${x0 + innerW / 2}" y="${y0 - 12}" text-anchor="middle" font-size="14">${panel.task}</text>`,
    );
    for (const tick of niceTicks(xLo, xHi)) {
      const tx = sx(tick);
      parts.push(`<line x1="${tx}" y1="${y0 + innerH}" x2="${tx}" y2="${y0 + innerH + 4}" stroke="#444"/>`);
      parts.push(
        `<text x="${tx}" y="${y0 + innerH + 17}" text-anchor="middle" font-size="10">${fmt(tick)}</text>`,
      );
    }
    for (const tick of niceTicks(yLo - yPad, yHi + yPad)) {
      const ty = sy(tick);
      parts.push(`<line x1="${x0 - 4}" y1="${ty}" x2="${x0}" y2="${ty}" stroke="#444"/>`);
      parts.push(
        `<text x="${x0 - 7}" y="${ty + 3}" text-anchor="end" font-size="10">${fmt(tick)}</text>`,
      );
    }
    parts.push(
      `<text x="${x0 + innerW / 2}" y="${y0 + innerH + 34}" text-anchor="middle" font-size="12">timesteps</text>`,
    );
    parts.push(
      `<text transform="translate(${x0 - 44},${y0 + innerH / 2}) rotate(-90)" ` +
        `text-anchor="middle" font-size="12">average episode reward (${opts.metric})</text>`,
    );
    // faint seeds under solid means
    const ordered = [...panel.traces].sort((a) => (a.kind === 'seed' ? -1 : 1));
    for (const trace of ordered) {
      const d = trace.x.map((v, i) => `${i === 0 ? 'M' : 'L'}${sx(v).toFixed(2)},${sy(trace.y[i]).toFixed(2)}`).join('');
      const cls = trace.kind === 'seed' ? 'seed-trace' : 'mean-trace';
      const style =
        trace.kind === 'seed'
          ? `stroke="${color(trace.strategy)}" stroke-opacity="0.25" stroke-width="1"`
          : `stroke="${color(trace.strategy)}" stroke-width="2"`;
      const points = JSON.stringify(trace.x.map((v, i) => [v, trace.y[i]]));
      parts.push(
        `<path class="${cls}" data-strategy="${trace.strategy}" data-points='${points}' d="${d}" fill="none" ${style}/>`,
      );
    }
    parts.push('</g>');
  });

  // legend: one entry per strategy
  strategies.forEach((s, i) => {
    const lx = 12 + i * 150;
    parts.push(`<line x1="${lx}" y1="12" x2="${lx + 18}" y2="12" stroke="${color(s)}" stroke-width="2"/>`);
    parts.push(`<text x="${lx + 23}" y="16" font-size="11">${s}</text>`);
  });

  parts.push('</svg>');
  return parts.join('\n');
}

/** Write SVG directly, or rasterize through sharp when the target is .png. */
export async function writeFigure(panels: Panel[], opts: FigureOptions, outPath: string): Promise<void> {
  const svg = renderSvg(panels, opts);
  if (outPath.toLowerCase().endsWith('.png')) {
    const { default: sharp } = await import('sharp');
    const buf = await sharp(Buffer.from(svg), { density: 144 }).png().toBuffer();
    writeFileSync(outPath, buf);
  } else {
    writeFileSync(outPath, svg);
  }
}
