import { describe, expect, it } from "vitest";
import { parseTotalRows, patternsIn, workloadsIn } from "../src/csv.js";

const HEADER =
  "run_id,pattern,workload,pipeline,service,requests,errors,p50_us,p95_us," +
  "p99_us,throughput_rps,cpu_seconds,energy_proxy,row_kind";

function totalLine(runId: string, pattern: string, workload: string,
                   energy: string): string {
  return `${runId},${pattern},${workload},,,10,0,100,200,300,1.5,0.25,${energy},total`;
}

function cellLine(runId: string): string {
  return `${runId},baseline,low,p1,svc,10,0,100,200,300,1.5,0.1,0.1,cell`;
}

describe("parseTotalRows", () => {
  it("keeps only total rows and preserves the raw energy string", () => {
    const text = [HEADER, cellLine("r1"),
                  totalLine("r1", "baseline", "low", "12.25000000000001")].join("\n");
    const rows = parseTotalRows(text);
    expect(rows).toHaveLength(1);
    expect(rows[0].pattern).toBe("baseline");
    expect(rows[0].energyProxyRaw).toBe("12.25000000000001");
    expect(rows[0].energyProxy).toBeCloseTo(12.25, 6);
  });

  it("names the missing column on schema mismatch", () => {
    const broken = HEADER.replace(",energy_proxy", "");
    expect(() => parseTotalRows([broken].join("\n")))
      .toThrow(/missing column: energy_proxy/);
  });

  it("rejects empty input", () => {
    expect(() => parseTotalRows("")).toThrow(/empty/);
  });

  it("rejects non-numeric energy values", () => {
    const text = [HEADER, totalLine("r1", "baseline", "low", "oops")].join("\n");
    expect(() => parseTotalRows(text)).toThrow(/not numeric/);
  });
});

describe("grouping helpers", () => {
  const rows = parseTotalRows([
    HEADER,
    totalLine("r1", "baseline", "medium", "1.0"),
    totalLine("r2", "baseline", "low", "1.0"),
    totalLine("r3", "cache_aside", "low", "0.5"),
    totalLine("r4", "circuit_breaker", "medium", "0.7"),
  ].join("\n"));

  it("orders workloads low/medium/high", () => {
    expect(workloadsIn(rows)).toEqual(["low", "medium"]);
  });

  it("lists non-baseline patterns in first-seen order", () => {
    expect(patternsIn(rows)).toEqual(["cache_aside", "circuit_breaker"]);
  });
});
