/** Minimal deterministic SVG builder: fixed styles, fixed number
 * formatting, output depends only on the data passed in. */

export const WIDTH = 480;
export const HEIGHT = 360;
export const MARGIN = { top: 36, right: 16, bottom: 48, left: 64 };

/** Fixed colour per method id so repeated runs and different panels agree. */
const METHOD_COLORS: Record<string, string> = {
  optimal: "#1f77b4",
  wmmse: "#17becf",
  bnn: "#d62728",
  rzf: "#2ca02c",
  zf: "#ff7f0e",
};
const FALLBACK_COLORS = ["#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

export function methodColor(method: string, index: number): string {
  return (
    METHOD_COLORS[method] ?? FALLBACK_COLORS[index % FALLBACK_COLORS.length]
  );
}

/** Fixed-precision coordinate formatting keeps the output byte-stable. */
export function fmt(x: number): string {
  if (!Number.isFinite(x)) return "0";
  const s = x.toFixed(2);
  return s === "-0.00" ? "0.00" : s;
}

/** Compact human label for tick values. */
export function tickLabel(x: number): string {
  if (x === 0) return "0";
  const ax = Math.abs(x);
  if (ax >= 1e4 || ax < 1e-3) {
    const e = Math.floor(Math.log10(ax));
    const m = x / 10 ** e;
    const ms = Math.abs(m - 1) < 1e-9 ? "" : `${m.toPrecision(3)}x`;
    return `${ms}1e${e}`;
  }
  return Number(x.toPrecision(4)).toString();
}

export interface Scale {
  (value: number): number;
  ticks: number[];
}

export function linearScale(
  lo: number,
  hi: number,
  rangeLo: number,
  rangeHi: number,
): Scale {
  const span = hi - lo || 1;
  const f = (v: number) => rangeLo + ((v - lo) / span) * (rangeHi - rangeLo);
  const step = span / 4;
  f.ticks = [0, 1, 2, 3, 4].map((i) => lo + i * step);
  return f;
}

export function log10Scale(
  lo: number,
  hi: number,
  rangeLo: number,
  rangeHi: number,
): Scale {
  const llo = Math.log10(lo);
  const lhi = Math.log10(hi);
  const span = lhi - llo || 1;
  const f = (v: number) =>
    rangeLo + ((Math.log10(v) - llo) / span) * (rangeHi - rangeLo);
  const ticks: number[] = [];
  for (let e = Math.ceil(llo); e <= Math.floor(lhi); e += 1) {
    ticks.push(10 ** e);
  }
  f.ticks = ticks.length >= 2 ? ticks : [lo, hi];
  return f;
}

export class Svg {
  private parts: string[] = [];

  constructor(title: string) {
    this.parts.push(
      `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" ` +
        `height="${HEIGHT}" viewBox="0 0 ${WIDTH} ${HEIGHT}" ` +
        `font-family="Helvetica, Arial, sans-serif">`,
      `<rect width="${WIDTH}" height="${HEIGHT}" fill="#ffffff"/>`,
      `<text x="${WIDTH / 2}" y="22" text-anchor="middle" ` +
        `font-size="15" fill="#111111">${escapeXml(title)}</text>`,
    );
  }

  line(x1: number, y1: number, x2: number, y2: number, stroke: string,
       width = 1, dash = ""): void {
    const d = dash ? ` stroke-dasharray="${dash}"` : "";
    this.parts.push(
      `<line x1="${fmt(x1)}" y1="${fmt(y1)}" x2="${fmt(x2)}" ` +
        `y2="${fmt(y2)}" stroke="${stroke}" stroke-width="${width}"${d}/>`,
    );
  }

  rect(x: number, y: number, w: number, h: number, fill: string): void {
    this.parts.push(
      `<rect x="${fmt(x)}" y="${fmt(y)}" width="${fmt(w)}" ` +
        `height="${fmt(h)}" fill="${fill}"/>`,
    );
  }

  circle(cx: number, cy: number, r: number, fill: string): void {
    this.parts.push(
      `<circle cx="${fmt(cx)}" cy="${fmt(cy)}" r="${r}" fill="${fill}"/>`,
    );
  }

  path(points: Array<[number, number]>, stroke: string): void {
    const d = points
      .map(([x, y], i) => `${i === 0 ? "M" : "L"}${fmt(x)} ${fmt(y)}`)
      .join(" ");
    this.parts.push(
      `<path d="${d}" fill="none" stroke="${stroke}" stroke-width="1.5"/>`,
    );
  }

  text(x: number, y: number, content: string, size = 11,
       anchor: "start" | "middle" | "end" = "middle",
       fill = "#333333", rotate = 0): void {
    const tr = rotate
      ? ` transform="rotate(${rotate} ${fmt(x)} ${fmt(y)})"`
      : "";
    this.parts.push(
      `<text x="${fmt(x)}" y="${fmt(y)}" text-anchor="${anchor}" ` +
        `font-size="${size}" fill="${fill}"${tr}>${escapeXml(content)}</text>`,
    );
  }

  toString(): string {
    return [...this.parts, "</svg>", ""].join("\n");
  }
}

export function escapeXml(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}
