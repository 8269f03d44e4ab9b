// Reader for the experiment CSV. Only run-total rows matter for the figures;
// the numeric strings are kept verbatim so plotted values are exactly what the
// exporter wrote, never a re-serialization.

export const EXPECTED_COLUMNS = [
  "run_id", "pattern", "workload", "pipeline", "service", "requests", "errors",
  "p50_us", "p95_us", "p99_us", "throughput_rps", "cpu_seconds", "energy_proxy",
  "row_kind",
] as const;

export interface TotalRow {
  runId: string;
  pattern: string;
  workload: string;
  energyProxyRaw: string; // verbatim CSV cell
  energyProxy: number;
}

function splitCsvLine(line: string): string[] {
  const cells: string[] = [];
  let current = "";
  let quoted = false;
  for (let i = 0; i < line.length; i++) {
    const ch = line[i];
    if (quoted) {
      if (ch === '"' && line[i + 1] === '"') {
        current += '"';
        i++;
      } else if (ch === '"') {
        quoted = false;
      } else {
        current += ch;
      }
    } else if (ch === '"') {
      quoted = true;
    } else if (ch === ",") {
      cells.push(current);
      current = "";
    } else {
      current += ch;
    }
  }
  cells.push(current);
  return cells;
}

export function parseTotalRows(text: string): TotalRow[] {
  const lines = text.split(/\r?\n/).filter((line) => line.length > 0);
  if (lines.length === 0) {
    throw new Error("CSV is empty");
  }
  const header = splitCsvLine(lines[0]);
  for (const column of EXPECTED_COLUMNS) {
    if (!header.includes(column)) {
      throw new Error(`missing column: ${column}`);
    }
  }
  const index = Object.fromEntries(header.map((name, i) => [name, i]));
  const totals: TotalRow[] = [];
  for (const line of lines.slice(1)) {
    const cells = splitCsvLine(line);
    if (cells[index["row_kind"]] !== "total") {
      continue;
    }
    const raw = cells[index["energy_proxy"]];
    const value = Number(raw);
    if (!Number.isFinite(value)) {
      throw new Error(`energy_proxy is not numeric in run ${cells[index["run_id"]]}`);
    }
    totals.push({
      runId: cells[index["run_id"]],
      pattern: cells[index["pattern"]],
      workload: cells[index["workload"]],
      energyProxyRaw: raw,
      energyProxy: value,
    });
  }
  return totals;
}

export const WORKLOAD_ORDER = ["low", "medium", "high"];

export function workloadsIn(rows: TotalRow[]): string[] {
  const present = new Set(rows.map((row) => row.workload));
  const ordered = WORKLOAD_ORDER.filter((level) => present.has(level));
  for (const level of present) {
    if (!ordered.includes(level)) {
      ordered.push(level);
    }
  }
  return ordered;
}

export function patternsIn(rows: TotalRow[]): string[] {
  const seen: string[] = [];
  for (const row of rows) {
    if (row.pattern !== "baseline" && !seen.includes(row.pattern)) {
      seen.push(row.pattern);
    }
  }
  return seen;
}
