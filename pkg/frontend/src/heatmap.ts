/** D x D table heatmap of edge-existence marginals.
 * Row = cause, column = effect; the diagonal stays blank. */

import type { Marginals } from "./api.js";

function cellColor(p: number): string {
  // white -> deep blue ramp; keeps 0 readable and 1 saturated
  const level = Math.round(255 - 205 * Math.min(Math.max(p, 0), 1));
  return `rgb(${level},${Math.round(level * 0.92 + 20)},255)`;
}

export function renderHeatmap(container: HTMLElement, data: Marginals): void {
  const table = container.ownerDocument.createElement("table");
  table.className = "heatmap";
  const head = table.insertRow();
  head.insertCell().textContent = "";
  for (const name of data.names) {
    const cell = head.insertCell();
    cell.textContent = name;
    cell.className = "hm-label";
  }
  for (let i = 0; i < data.d; i++) {
    const row = table.insertRow();
    const label = row.insertCell();
    label.textContent = data.names[i];
    label.className = "hm-label";
    for (let j = 0; j < data.d; j++) {
      const cell = row.insertCell();
      if (i === j) {
        cell.className = "hm-diag";
        continue;
      }
      const p = data.marginals[i][j];
      cell.className = "hm-cell";
      cell.style.backgroundColor = cellColor(p);
      cell.title = `${data.names[i]} → ${data.names[j]}: ${p.toFixed(3)}`;
      cell.dataset.p = String(p);
    }
  }
  container.replaceChildren(table);
}
