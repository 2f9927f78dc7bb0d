/** Reading and validating the benchmark CSV records. */

import { readFileSync } from "node:fs";
import Papa from "papaparse";

export const CSV_COLUMNS = [
  "method",
  "instance",
  "N",
  "K",
  "metric_name",
  "metric_value",
  "feasible",
  "wall_time_s",
  "seed",
] as const;

export interface BenchRecord {
  method: string;
  instance: number;
  N: number;
  K: number;
  metricName: string;
  metricValue: number;
  feasible: boolean;
  wallTimeS: number;
  seed: number;
}

export class CsvFormatError extends Error {}

/** Parse one benchmark CSV file; throws CsvFormatError with the file name
 * on empty input or unexpected columns. */
export function readRecords(path: string): BenchRecord[] {
  const text = readFileSync(path, "utf8");
  if (text.trim().length === 0) {
    throw new CsvFormatError(`empty CSV file: ${path}`);
  }
  const parsed = Papa.parse<Record<string, string>>(text.trim(), {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const e = parsed.errors[0];
    throw new CsvFormatError(`${path}: ${e.message} (row ${e.row})`);
  }
  const fields = parsed.meta.fields ?? [];
  const missing = CSV_COLUMNS.filter((c) => !fields.includes(c));
  if (missing.length > 0) {
    throw new CsvFormatError(
      `${path}: missing required columns: ${missing.join(", ")} ` +
        `(found: ${fields.join(", ") || "none"})`,
    );
  }
  if (parsed.data.length === 0) {
    throw new CsvFormatError(`empty CSV file (header only): ${path}`);
  }
  return parsed.data.map((row, i) => {
    const num = (col: string): number => {
      const v = Number(row[col]);
      if (!Number.isFinite(v) && row[col] !== "inf" && row[col] !== "Infinity") {
        throw new CsvFormatError(
          `${path}: row ${i + 1}: non-numeric value ${JSON.stringify(
            row[col],
          )} in column ${col}`,
        );
      }
      return row[col] === "inf" ? Infinity : v;
    };
    return {
      method: row.method,
      instance: num("instance"),
      N: num("N"),
      K: num("K"),
      metricName: row.metric_name,
      metricValue: num("metric_value"),
      feasible: num("feasible") !== 0,
      wallTimeS: num("wall_time_s"),
      seed: num("seed"),
    };
  });
}

/** Stable method ordering: canonical ids first, then alphabetical. */
const METHOD_ORDER = ["optimal", "wmmse", "bnn", "rzf", "zf"];

export function orderedMethods(records: BenchRecord[]): string[] {
  const seen = [...new Set(records.map((r) => r.method))];
  return seen.sort((a, b) => {
    const ia = METHOD_ORDER.indexOf(a);
    const ib = METHOD_ORDER.indexOf(b);
    if (ia !== -1 || ib !== -1) {
      return (ia === -1 ? METHOD_ORDER.length : ia) -
        (ib === -1 ? METHOD_ORDER.length : ib);
    }
    return a < b ? -1 : a > b ? 1 : 0;
  });
}

export function mean(values: number[]): number {
  if (values.length === 0) return NaN;
  return values.reduce((a, b) => a + b, 0) / values.length;
}
