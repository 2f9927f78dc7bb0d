import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { CsvFormatError, readRecords, orderedMethods } from "../src/csv.js";
import { berPanel, powerPanel, sweepPower, timePanel } from "../src/figures.js";
import { runReport } from "../src/cli.js";
import { summarize, summaryMarkdown } from "../src/summary.js";

const HEADER = "method,instance,N,K,metric_name,metric_value,feasible," +
  "wall_time_s,seed";

function tmpCsv(name: string, lines: string[]): string {
  const dir = mkdtempSync(join(tmpdir(), "report-test-"));
  const path = join(dir, name);
  writeFileSync(path, lines.join("\n") + "\n");
  return path;
}

function powerCsv(): string {
  return tmpCsv("power.csv", [
    HEADER,
    "optimal,0,8,7,total_power_w,0.011,1,0.004,1",
    "optimal,1,8,7,total_power_w,0.013,1,0.004,1",
    "bnn,0,8,7,total_power_w,0.012,1,0.0003,1",
    "bnn,1,8,7,total_power_w,inf,0,0.0003,1",
    "zf,0,8,7,total_power_w,0.020,1,0.0001,1",
    "zf,1,8,7,total_power_w,0.025,1,0.0001,1",
  ]);
}

function timeCsv(): string {
  return tmpCsv("time.csv", [
    HEADER,
    "optimal,0,8,7,wall_time_s,0.004,1,0.004,1",
    "bnn,0,8,7,wall_time_s,0.0003,1,0.0003,1",
  ]);
}

function berCsv(methods: string[]): string {
  const rows = [HEADER];
  for (const m of methods) {
    for (const [i, p] of [0.25, 1.0, 4.0].entries()) {
      const ber = 0.1 / (i + 1) / (m === "zf" ? 1 : 2);
      rows.push(`${m},${i},4,4,ber@${p}W,${ber},1,0.001,9`);
    }
  }
  return tmpCsv("ber.csv", rows);
}

describe("csv reading", () => {
  it("parses records and types", () => {
    const recs = readRecords(powerCsv());
    expect(recs).toHaveLength(6);
    expect(recs[0].method).toBe("optimal");
    expect(recs[3].feasible).toBe(false);
    expect(recs[3].metricValue).toBe(Infinity);
  });

  it("rejects an empty file naming it", () => {
    const path = tmpCsv("empty.csv", [""]);
    expect(() => readRecords(path)).toThrowError(/empty.csv/);
  });

  it("rejects a header-only file naming it", () => {
    const path = tmpCsv("only-header.csv", [HEADER]);
    expect(() => readRecords(path)).toThrowError(/only-header.csv/);
  });

  it("describes missing columns", () => {
    const path = tmpCsv("bad.csv", ["method,foo", "bnn,1"]);
    expect(() => readRecords(path)).toThrowError(
      /missing required columns: instance/,
    );
    expect(() => readRecords(path)).toThrowError(CsvFormatError);
  });

  it("orders methods canonically", () => {
    const recs = readRecords(powerCsv());
    expect(orderedMethods(recs)).toEqual(["optimal", "bnn", "zf"]);
  });
});

describe("figure panels", () => {
  it("renders one bar per method in the power panel", () => {
    const svg = powerPanel(readRecords(powerCsv()));
    const bars = svg.match(/<rect[^>]*fill="#(?!ffffff)/g) ?? [];
    expect(bars).toHaveLength(3);
    expect(svg).toContain("average transmit power");
  });

  it("excludes infeasible records from power averages", () => {
    const svg = powerPanel(readRecords(powerCsv()));
    // the bnn bar averages only the feasible 12 mW record
    expect(svg).toContain(">12.00<");
  });

  it("renders a single curve without a legend for one method", () => {
    const svg = berPanel(readRecords(berCsv(["bnn"])), "c) test");
    const curves = svg.match(/<path /g) ?? [];
    expect(curves).toHaveLength(1);
    // legend line markers only appear with two or more methods
    expect(svg.match(/stroke-width="2"/g)).toBeNull();
  });

  it("renders one curve per method with a legend otherwise", () => {
    const svg = berPanel(readRecords(berCsv(["bnn", "zf"])), "c) test");
    expect(svg.match(/<path /g)).toHaveLength(2);
    expect(svg.match(/stroke-width="2"/g)).toHaveLength(2);
  });

  it("parses sweep powers from the metric name", () => {
    const recs = readRecords(berCsv(["bnn"]));
    expect(recs.map(sweepPower)).toEqual([0.25, 1, 4]);
    expect(() =>
      sweepPower({ ...recs[0], metricName: "nope" }),
    ).toThrowError(/expected "ber@<power>W"/);
  });

  it("time panel shows per-method mean milliseconds", () => {
    const svg = timePanel(readRecords(timeCsv()));
    expect(svg).toContain(">4.000<");
    expect(svg).toContain(">0.300<");
  });
});

describe("summary", () => {
  it("reports feasibility rates and timings", () => {
    const rows = summarize([
      { name: "power", records: readRecords(powerCsv()) },
    ]);
    const bnn = rows.find((r) => r.method === "bnn");
    expect(bnn?.feasibleRate).toBeCloseTo(0.5);
    expect(bnn?.records).toBe(2);
    const md = summaryMarkdown(rows);
    expect(md).toContain("| power | bnn | 2 | 50.0% |");
  });
});

describe("end-to-end determinism", () => {
  it("produces byte-identical outputs across repeated runs", () => {
    const args = {
      power: powerCsv(),
      time: timeCsv(),
      berStatic: berCsv(["optimal", "bnn", "rzf", "zf"]),
      berDynamic: berCsv(["optimal", "bnn", "zf"]),
    };
    const out1 = mkdtempSync(join(tmpdir(), "report-out1-"));
    const out2 = mkdtempSync(join(tmpdir(), "report-out2-"));
    const files1 = runReport({ ...args, out: out1 });
    const files2 = runReport({ ...args, out: out2 });
    expect(files1).toHaveLength(5);
    for (let i = 0; i < files1.length; i += 1) {
      const a = readFileSync(files1[i], "utf8");
      const b = readFileSync(files2[i], "utf8");
      expect(a).toBe(b);
      expect(a.length).toBeGreaterThan(0);
    }
  });
});
