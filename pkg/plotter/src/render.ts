// Figure assembly: one grouped-bar chart per pattern (baseline vs pattern,
// across workload levels) plus a summary chart covering every configuration.

import { Bar, groupedBarChart } from "./svg.js";
import { TotalRow, parseTotalRows, patternsIn, workloadsIn } from "./csv.js";

export interface Figure {
  filename: string;
  svg: string;
}

const Y_LABEL = "total energy proxy (cpu-joule)";

function pick(rows: TotalRow[], pattern: string, workload: string): TotalRow | undefined {
  return rows.find((row) => row.pattern === pattern && row.workload === workload);
}

function patternFigure(rows: TotalRow[], pattern: string, workloads: string[]): Figure {
  const bars: Bar[] = [];
  for (const workload of workloads) {
    for (const series of ["baseline", pattern]) {
      const row = pick(rows, series, workload);
      if (row !== undefined) {
        bars.push({
          group: workload,
          series,
          value: row.energyProxy,
          rawValue: row.energyProxyRaw,
          pattern: series,
          workload,
        });
      }
    }
  }
  return {
    filename: `energy_${pattern}.svg`,
    svg: groupedBarChart(`${pattern} vs baseline`, Y_LABEL, workloads,
      ["baseline", pattern], bars),
  };
}

function summaryFigure(rows: TotalRow[], patterns: string[],
                       workloads: string[]): Figure {
  const configurations = ["baseline", ...patterns];
  const bars: Bar[] = [];
  for (const pattern of configurations) {
    for (const workload of workloads) {
      const row = pick(rows, pattern, workload);
      if (row !== undefined) {
        bars.push({
          group: pattern,
          series: workload, // legend/color by workload level
          value: row.energyProxy,
          rawValue: row.energyProxyRaw,
          pattern,
          workload,
        });
      }
    }
  }
  return {
    filename: "energy_summary.svg",
    svg: groupedBarChart("total energy proxy by configuration", Y_LABEL,
      configurations, workloads, bars),
  };
}

export function render(text: string): Figure[] {
  const rows = parseTotalRows(text);
  if (rows.length === 0) {
    throw new Error("CSV has no run-total rows");
  }
  if (!rows.some((row) => row.pattern === "baseline")) {
    throw new Error("no baseline rows to compare against");
  }
  const patterns = patternsIn(rows);
  if (patterns.length === 0) {
    throw new Error("nothing to compare: CSV contains only baseline runs");
  }
  const workloads = workloadsIn(rows);
  const figures = patterns.map((pattern) => patternFigure(rows, pattern, workloads));
  figures.push(summaryFigure(rows, patterns, workloads));
  return figures;
}
