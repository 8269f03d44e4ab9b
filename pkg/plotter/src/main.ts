// CLI: node dist/main.js <results.csv> <out-dir>
// Exit 0 on success, 1 on bad input (missing file, schema mismatch, nothing to
// compare). One figure per pattern plus a summary.

import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";
import { render } from "./render.js";

function main(argv: string[]): number {
  if (argv.length !== 2) {
    process.stderr.write("usage: main.js <results.csv> <out-dir>\n");
    return 1;
  }
  const [csvPath, outDir] = argv;
  let text: string;
  try {
    text = readFileSync(csvPath, "utf-8");
  } catch (err) {
    process.stderr.write(`cannot read CSV ${csvPath}: ${err}\n`);
    return 1;
  }
  let figures;
  try {
    figures = render(text);
  } catch (err) {
    process.stderr.write(`${err instanceof Error ? err.message : err}\n`);
    return 1;
  }
  mkdirSync(outDir, { recursive: true });
  for (const figure of figures) {
    const path = join(outDir, figure.filename);
    writeFileSync(path, figure.svg, "utf-8");
    process.stdout.write(`${path}\n`);
  }
  return 0;
}

process.exit(main(process.argv.slice(2)));
