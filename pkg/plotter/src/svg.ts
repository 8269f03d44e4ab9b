// Minimal deterministic SVG emission: fixed canvas, no timestamps, attribute
// order is stable so identical inputs give byte-identical files.

export const WIDTH = 720;
export const HEIGHT = 420;
export const MARGIN = { top: 48, right: 24, bottom: 64, left: 84 };

export interface Bar {
  group: string; // x-axis group label (workload level or pattern)
  series: string; // legend entry, chooses the color
  value: number;
  rawValue: string; // verbatim CSV string, embedded as data-value
  pattern: string; // emitted as data-pattern
  workload: string; // emitted as data-workload
}

const PALETTE = [
  "#4878a8", "#e49444", "#559e54", "#d1605e", "#857aab", "#82695c",
];

function esc(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/"/g, "&quot;");
}

function formatTick(value: number): string {
  if (value === 0) {
    return "0";
  }
  return value >= 100 ? value.toFixed(0) : value.toPrecision(3);
}

export function groupedBarChart(
  title: string,
  yLabel: string,
  groups: string[],
  seriesNames: string[],
  bars: Bar[],
): string {
  const plotW = WIDTH - MARGIN.left - MARGIN.right;
  const plotH = HEIGHT - MARGIN.top - MARGIN.bottom;
  const maxValue = Math.max(...bars.map((bar) => bar.value), 0);
  const yMax = maxValue > 0 ? maxValue * 1.08 : 1;

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}" ` +
    `viewBox="0 0 ${WIDTH} ${HEIGHT}" font-family="sans-serif">`);
  parts.push(`<rect width="${WIDTH}" height="${HEIGHT}" fill="white"/>`);
  parts.push(
    `<text x="${WIDTH / 2}" y="24" text-anchor="middle" font-size="16">` +
    `${esc(title)}</text>`);

  // y axis: five gridlines with tick labels
  for (let tick = 0; tick <= 4; tick++) {
    const value = (yMax * tick) / 4;
    const y = MARGIN.top + plotH - (plotH * tick) / 4;
    parts.push(
      `<line x1="${MARGIN.left}" y1="${y}" x2="${WIDTH - MARGIN.right}" y2="${y}" ` +
      `stroke="#dddddd"/>`);
    parts.push(
      `<text x="${MARGIN.left - 8}" y="${y + 4}" text-anchor="end" font-size="11">` +
      `${formatTick(value)}</text>`);
  }
  parts.push(
    `<text x="20" y="${MARGIN.top + plotH / 2}" text-anchor="middle" font-size="12" ` +
    `transform="rotate(-90 20 ${MARGIN.top + plotH / 2})">${esc(yLabel)}</text>`);

  const groupWidth = plotW / Math.max(groups.length, 1);
  const barWidth = Math.min(48, (groupWidth * 0.8) / Math.max(seriesNames.length, 1));

  groups.forEach((group, gi) => {
    const cx = MARGIN.left + groupWidth * gi + groupWidth / 2;
    parts.push(
      `<text x="${cx}" y="${HEIGHT - MARGIN.bottom + 20}" text-anchor="middle" ` +
      `font-size="12">${esc(group)}</text>`);
    const inGroup = bars.filter((bar) => bar.group === group);
    inGroup.forEach((bar) => {
      const si = seriesNames.indexOf(bar.series);
      const offset = (si - (seriesNames.length - 1) / 2) * (barWidth + 4);
      const h = yMax > 0 ? (bar.value / yMax) * plotH : 0;
      const x = cx + offset - barWidth / 2;
      const y = MARGIN.top + plotH - h;
      parts.push(
        `<rect x="${x.toFixed(2)}" y="${y.toFixed(2)}" width="${barWidth.toFixed(2)}" ` +
        `height="${h.toFixed(2)}" fill="${PALETTE[si % PALETTE.length]}" ` +
        `data-pattern="${esc(bar.pattern)}" data-workload="${esc(bar.workload)}" ` +
        `data-value="${esc(bar.rawValue)}"/>`);
      parts.push(
        `<text x="${(x + barWidth / 2).toFixed(2)}" y="${(y - 4).toFixed(2)}" ` +
        `text-anchor="middle" font-size="9">${esc(formatTick(bar.value))}</text>`);
    });
  });

  // legend, one swatch per series
  seriesNames.forEach((name, si) => {
    const x = MARGIN.left + si * 150;
    const y = HEIGHT - 18;
    parts.push(
      `<rect x="${x}" y="${y - 10}" width="12" height="12" ` +
      `fill="${PALETTE[si % PALETTE.length]}"/>`);
    parts.push(
      `<text x="${x + 18}" y="${y}" font-size="11">${esc(name)}</text>`);
  });

  parts.push(`<line x1="${MARGIN.left}" y1="${MARGIN.top + plotH}" ` +
    `x2="${WIDTH - MARGIN.right}" y2="${MARGIN.top + plotH}" stroke="#333333"/>`);
  parts.push("</svg>");
  return parts.join("\n") + "\n";
}
