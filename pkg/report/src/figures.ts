/** The four figure panels: power bars, timing bars, and BER curves. */

import {
  BenchRecord,
  CsvFormatError,
  mean,
  orderedMethods,
} from "./csv.js";
import {
  HEIGHT,
  MARGIN,
  Svg,
  WIDTH,
  linearScale,
  log10Scale,
  methodColor,
  tickLabel,
} from "./svg.js";

const PLOT_LEFT = MARGIN.left;
const PLOT_RIGHT = WIDTH - MARGIN.right;
const PLOT_TOP = MARGIN.top;
const PLOT_BOTTOM = HEIGHT - MARGIN.bottom;

interface BarDatum {
  method: string;
  value: number;
}

function barPanel(title: string, yLabel: string, data: BarDatum[],
                  valueLabel: (v: number) => string): string {
  const svg = new Svg(title);
  const hi = Math.max(...data.map((d) => d.value)) * 1.15 || 1;
  const y = linearScale(0, hi, PLOT_BOTTOM, PLOT_TOP);
  for (const t of y.ticks) {
    svg.line(PLOT_LEFT, y(t), PLOT_RIGHT, y(t), "#dddddd");
    svg.text(PLOT_LEFT - 6, y(t) + 4, tickLabel(t), 10, "end");
  }
  const slot = (PLOT_RIGHT - PLOT_LEFT) / data.length;
  data.forEach((d, i) => {
    const w = slot * 0.6;
    const x0 = PLOT_LEFT + slot * i + (slot - w) / 2;
    svg.rect(x0, y(d.value), w, PLOT_BOTTOM - y(d.value),
             methodColor(d.method, i));
    svg.text(x0 + w / 2, y(d.value) - 5, valueLabel(d.value), 10);
    svg.text(x0 + w / 2, PLOT_BOTTOM + 16, d.method, 11);
  });
  svg.line(PLOT_LEFT, PLOT_BOTTOM, PLOT_RIGHT, PLOT_BOTTOM, "#333333");
  svg.line(PLOT_LEFT, PLOT_TOP, PLOT_LEFT, PLOT_BOTTOM, "#333333");
  svg.text(16, (PLOT_TOP + PLOT_BOTTOM) / 2, yLabel, 12, "middle",
           "#333333", -90);
  return svg.toString();
}

/** Panel a: average transmit power per method. */
export function powerPanel(records: BenchRecord[]): string {
  const data = orderedMethods(records).map((m) => ({
    method: m,
    value: mean(
      records
        .filter((r) => r.method === m && r.feasible &&
          Number.isFinite(r.metricValue))
        .map((r) => r.metricValue * 1e3),
    ),
  }));
  return barPanel("a) average transmit power", "power [mW]", data,
                  (v) => v.toFixed(2));
}

/** Panel b: mean execution time per sample per method. */
export function timePanel(records: BenchRecord[]): string {
  const data = orderedMethods(records).map((m) => ({
    method: m,
    value: mean(
      records.filter((r) => r.method === m).map((r) => r.wallTimeS * 1e3),
    ),
  }));
  return barPanel("b) execution time per sample", "time [ms]", data,
                  (v) => (v >= 10 ? v.toFixed(1) : v.toFixed(3)));
}

/** Power in watts encoded by the bench module as "ber@<power>W". */
export function sweepPower(r: BenchRecord): number {
  const m = /^ber@(.+)W$/.exec(r.metricName);
  if (m === null) {
    throw new CsvFormatError(
      `unexpected metric_name ${JSON.stringify(r.metricName)}; ` +
        `expected "ber@<power>W"`,
    );
  }
  return Number(m[1]);
}

/** Panels c and d: BER against transmit power, log BER axis. */
export function berPanel(records: BenchRecord[], title: string): string {
  const svg = new Svg(title);
  const methods = orderedMethods(records);
  const powers = [...new Set(records.map(sweepPower))].sort((a, b) => a - b);
  const bers = records.map((r) => r.metricValue).filter((v) => v > 0);
  const lo = Math.min(...bers, 1e-1);
  const floor = 10 ** Math.floor(Math.log10(lo));
  const x = log10Scale(powers[0], powers[powers.length - 1], PLOT_LEFT,
                       PLOT_RIGHT);
  const y = log10Scale(floor, 1, PLOT_BOTTOM, PLOT_TOP);
  for (const t of y.ticks) {
    svg.line(PLOT_LEFT, y(t), PLOT_RIGHT, y(t), "#dddddd");
    svg.text(PLOT_LEFT - 6, y(t) + 4, tickLabel(t), 10, "end");
  }
  for (const p of powers) {
    svg.text(x(p), PLOT_BOTTOM + 16, tickLabel(p), 10);
  }
  svg.line(PLOT_LEFT, PLOT_BOTTOM, PLOT_RIGHT, PLOT_BOTTOM, "#333333");
  svg.line(PLOT_LEFT, PLOT_TOP, PLOT_LEFT, PLOT_BOTTOM, "#333333");
  svg.text((PLOT_LEFT + PLOT_RIGHT) / 2, HEIGHT - 12, "transmit power [W]",
           12);
  svg.text(16, (PLOT_TOP + PLOT_BOTTOM) / 2, "bit error rate", 12, "middle",
           "#333333", -90);
  methods.forEach((m, mi) => {
    const color = methodColor(m, mi);
    const pts: Array<[number, number]> = [];
    for (const p of powers) {
      const rec = records.find(
        (r) => r.method === m && sweepPower(r) === p,
      );
      if (rec !== undefined && rec.metricValue > 0) {
        pts.push([x(p), y(Math.max(rec.metricValue, floor))]);
      }
    }
    svg.path(pts, color);
    for (const [px, py] of pts) svg.circle(px, py, 2.5, color);
    if (methods.length > 1) {
      const lx = PLOT_LEFT + 12;
      const ly = PLOT_TOP + 14 + 16 * mi;
      svg.line(lx, ly - 4, lx + 18, ly - 4, color, 2);
      svg.text(lx + 24, ly, m, 11, "start");
    }
  });
  return svg.toString();
}
