import { readFileSync } from 'fs';
import Papa from 'papaparse';

export interface Series {
  x: number[];
  y: number[];
}

/** Read one metric column (y) against global_step (x) from a metrics CSV. */
export function loadMetricColumn(csvPath: string, metric: string): Series {
  const text = readFileSync(csvPath, 'utf8');
  const parsed = Papa.parse<Record<string, string>>(text, {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    throw new Error(`${csvPath}: ${parsed.errors[0].message}`);
  }
  const rows = parsed.data;
  if (rows.length === 0) {
    throw new Error(`${csvPath}: no data rows`);
  }
  for (const column of ['global_step', metric]) {
    if (!(column in rows[0])) {
      throw new Error(`${csvPath}: missing column '${column}'`);
    }
  }
  const x = rows.map((r) => Number(r['global_step']));
  const y = rows.map((r) => Number(r[metric]));
  return { x, y };
}

/** Trailing rolling mean; window 1 returns the raw values. */
export function rollingMean(values: number[], window: number): number[] {
  if (window <= 1) return values.slice();
  const out = new Array<number>(values.length);
  let sum = 0;
  for (let i = 0; i < values.length; i++) {
    sum += values[i];
    if (i >= window) sum -= values[i - window];
    out[i] = sum / Math.min(i + 1, window);
  }
  return out;
}

/** Piecewise-linear interpolation of a series onto the given grid. */
export function interpolate(series: Series, grid: number[]): number[] {
  const { x, y } = series;
  const out = new Array<number>(grid.length);
  let j = 0;
  for (let i = 0; i < grid.length; i++) {
    const g = grid[i];
    while (j < x.length - 2 && x[j + 1] < g) j++;
    if (g <= x[0]) {
      out[i] = y[0];
    } else if (g >= x[x.length - 1]) {
      out[i] = y[y.length - 1];
    } else {
      const t = (g - x[j]) / (x[j + 1] - x[j]);
      out[i] = y[j] + t * (y[j + 1] - y[j]);
    }
  }
  return out;
}

/**
 * Uniform grid over the timestep range shared by every series, so the mean
 * never extrapolates any seed.
 */
export function commonGrid(seriesList: Series[], points = 256): number[] {
  const lo = Math.max(...seriesList.map((s) => s.x[0]));
  const hi = Math.min(...seriesList.map((s) => s.x[s.x.length - 1]));
  if (!(hi > lo)) {
    return [lo];
  }
  const grid = new Array<number>(points);
  for (let i = 0; i < points; i++) {
    grid[i] = lo + ((hi - lo) * i) / (points - 1);
  }
  return grid;
}

/** Pointwise arithmetic mean of the interpolated seed traces. */
export function meanTrace(seriesList: Series[], grid: number[]): number[] {
  const interpolated = seriesList.map((s) => interpolate(s, grid));
  const out = new Array<number>(grid.length).fill(0);
  for (const values of interpolated) {
    for (let i = 0; i < grid.length; i++) out[i] += values[i];
  }
  for (let i = 0; i < grid.length; i++) out[i] /= seriesList.length;
  return out;
}
