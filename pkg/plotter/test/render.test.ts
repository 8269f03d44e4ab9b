import { describe, expect, it } from "vitest";
import { render } from "../src/render.js";

const HEADER =
  "run_id,pattern,workload,pipeline,service,requests,errors,p50_us,p95_us," +
  "p99_us,throughput_rps,cpu_seconds,energy_proxy,row_kind";

const PATTERNS = ["circuit_breaker", "async_request_reply", "request_collapsing",
                  "gateway_offloading", "cache_aside"];
const LEVELS = ["low", "medium", "high"];

function matrixCsv(): { text: string; values: Map<string, string> } {
  const lines = [HEADER];
  const values = new Map<string, string>();
  let energy = 10.0;
  for (const pattern of ["baseline", ...PATTERNS]) {
    for (const level of LEVELS) {
      const raw = energy.toString();
      values.set(`${pattern}|${level}`, raw);
      lines.push(`${pattern}-${level},${pattern},${level},,,5,0,1,2,3,0.5,${raw},${raw},total`);
      energy *= 1.03125;
    }
  }
  return { text: lines.join("\n"), values };
}

describe("render", () => {
  it("emits one figure per pattern plus a summary", () => {
    const { text } = matrixCsv();
    const figures = render(text);
    expect(figures.map((f) => f.filename).sort()).toEqual([
      "energy_async_request_reply.svg",
      "energy_cache_aside.svg",
      "energy_circuit_breaker.svg",
      "energy_gateway_offloading.svg",
      "energy_request_collapsing.svg",
      "energy_summary.svg",
    ]);
  });

  it("embeds every CSV total value verbatim", () => {
    const { text, values } = matrixCsv();
    const attr = /data-pattern="([^"]+)" data-workload="([^"]+)" data-value="([^"]+)"/g;
    const seen = new Map<string, string>();
    for (const figure of render(text)) {
      for (const match of figure.svg.matchAll(attr)) {
        const key = `${match[1]}|${match[2]}`;
        expect(values.get(key)).toBe(match[3]);
        seen.set(key, match[3]);
      }
    }
    expect(seen.size).toBe(values.size);
  });

  it("is deterministic for identical input", () => {
    const { text } = matrixCsv();
    const first = render(text);
    const second = render(text);
    expect(second).toEqual(first);
  });

  it("errors on baseline-only input", () => {
    const lines = [HEADER];
    for (const level of LEVELS) {
      lines.push(`baseline-${level},baseline,${level},,,5,0,1,2,3,0.5,1.0,1.0,total`);
    }
    expect(() => render(lines.join("\n"))).toThrow(/nothing to compare/);
  });

  it("errors when no baseline exists", () => {
    const lines = [HEADER,
                   "cache_aside-low,cache_aside,low,,,5,0,1,2,3,0.5,1.0,1.0,total"];
    expect(() => render(lines.join("\n"))).toThrow(/baseline/);
  });

  it("renders valid standalone SVG documents", () => {
    const { text } = matrixCsv();
    for (const figure of render(text)) {
      expect(figure.svg.startsWith("<svg xmlns=")).toBe(true);
      expect(figure.svg.trimEnd().endsWith("</svg>")).toBe(true);
      expect(figure.svg).toContain("total energy proxy");
    }
  });
});
