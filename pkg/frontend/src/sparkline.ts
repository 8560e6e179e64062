/** Minimal SVG sparkline for per-round metric series. */

const SVG_NS = "http://www.w3.org/2000/svg";

export function renderSparkline(
  container: HTMLElement,
  values: (number | null)[],
  width = 220,
  height = 48,
): void {
  const doc = container.ownerDocument;
  const svg = doc.createElementNS(SVG_NS, "svg");
  svg.setAttribute("width", String(width));
  svg.setAttribute("height", String(height));
  svg.setAttribute("class", "sparkline");
  const points = values
    .map((v, k) => ({ v, k }))
    .filter((p): p is { v: number; k: number } => p.v !== null && isFinite(p.v as number));
  if (points.length >= 1) {
    const lo = Math.min(...points.map((p) => p.v));
    const hi = Math.max(...points.map((p) => p.v));
    const span = hi - lo || 1;
    const xStep = points.length > 1 ? (width - 8) / (points.length - 1) : 0;
    const coords = points.map((p, idx) => {
      const x = 4 + idx * xStep;
      const y = height - 6 - ((p.v - lo) / span) * (height - 12);
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    });
    const line = doc.createElementNS(SVG_NS, "polyline");
    line.setAttribute("points", coords.join(" "));
    line.setAttribute("fill", "none");
    line.setAttribute("stroke", "#2f6fde");
    line.setAttribute("stroke-width", "1.5");
    svg.appendChild(line);
    const last = doc.createElementNS(SVG_NS, "text");
    last.setAttribute("x", String(width - 4));
    last.setAttribute("y", "12");
    last.setAttribute("text-anchor", "end");
    last.setAttribute("class", "spark-value");
    last.textContent = points[points.length - 1].v.toFixed(4);
    svg.appendChild(last);
  }
  container.replaceChildren(svg);
}
