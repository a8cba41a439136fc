// DOM builders. Pure functions of state fragments; every view is rebuilt
// from scratch so identical state always renders identical markup.

import type { Attribution, Condition, Explanation, SchemaSpec } from "./api";
import { changedConditions, renderCondition } from "./state";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, className?: string, text?: string): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function featureEditor(
  schema: SchemaSpec,
  point: Record<string, number | string>,
  overrides: Record<string, number | string>,
  onEdit: (feature: string, raw: string) => void,
): HTMLElement {
  const root = el("div", "feature-editor");
  for (const col of schema.columns) {
    const row = el("label", "feature-row");
    row.appendChild(el("span", "feature-name", col.name));
    const current = overrides[col.name] ?? point[col.name];
    let control: HTMLInputElement | HTMLSelectElement;
    if (col.kind === "numerical") {
      control = el("input");
      control.type = "number";
      control.step = "any";
      control.value = String(current);
    } else {
      control = el("select");
      for (const cat of col.categories ?? []) {
        const opt = el("option", undefined, cat);
        opt.value = cat;
        if (cat === current) opt.selected = true;
        control.appendChild(opt);
      }
    }
    control.setAttribute("data-feature", col.name);
    control.addEventListener("change", () => onEdit(col.name, control.value));
    if (col.name in overrides) row.classList.add("overridden");
    row.appendChild(control);
    root.appendChild(row);
  }
  return root;
}

export function contextPanel(conditions: Condition[],
                             highlight: Set<string> = new Set()): HTMLElement {
  const root = el("div", "context-panel");
  if (conditions.length === 0) {
    root.appendChild(el("p", "context-always", "applies everywhere (no conditions)"));
    return root;
  }
  const list = el("ul", "context-list");
  for (const cond of conditions) {
    const text = renderCondition(cond);
    const item = el("li", "context-condition", text);
    if (highlight.has(text)) item.classList.add("changed");
    list.appendChild(item);
  }
  root.appendChild(list);
  return root;
}

/** Horizontal bar chart of the service-ranked attributions. The order is
 * exactly the response order; the client never re-sorts. */
export function attributionChart(attrs: Attribution[], topK: number): HTMLElement {
  const root = el("div", "attribution-chart");
  const shown = attrs.slice(0, topK);
  const scale = Math.max(...shown.map((a) => Math.abs(a.value)), 1e-12);
  for (const a of shown) {
    const row = el("div", "attribution-row");
    const label = a.category !== null ? a.encoded_feature : a.feature;
    row.appendChild(el("span", "attribution-label", label));
    const track = el("div", "attribution-track");
    const bar = el("div", `attribution-bar ${a.value >= 0 ? "positive" : "negative"}`);
    bar.style.width = `${(Math.abs(a.value) / scale) * 100}%`;
    bar.setAttribute("data-value", String(a.value));
    track.appendChild(bar);
    row.appendChild(track);
    row.appendChild(el("span", "attribution-value", formatNumber(a.value)));
    root.appendChild(row);
  }
  return root;
}

export function leafBadge(leafChanged: boolean): HTMLElement {
  const badge = el("span",
    leafChanged ? "leaf-badge changed" : "leaf-badge unchanged",
    leafChanged ? "leaf changed" : "same leaf");
  return badge;
}

export function explanationCard(title: string, expl: Explanation, topK: number,
                                highlight: Set<string> = new Set()): HTMLElement {
  const card = el("section", "explanation-card");
  card.appendChild(el("h3", undefined, title));
  const pred = el("p", "prediction",
    `surrogate: ${formatNumber(expl.surrogate_prediction)}`
    + (expl.oracle_prediction !== null
      ? ` | target: ${formatNumber(expl.oracle_prediction)}`
      : ""));
  card.appendChild(pred);
  card.appendChild(contextPanel(expl.context, highlight));
  card.appendChild(attributionChart(expl.top_attributions, topK));
  return card;
}

export function comparisonView(original: Explanation,
                               whatIf: { explanation: Explanation; leaf_changed: boolean } | null,
                               topK: number): HTMLElement {
  const root = el("div", "comparison");
  root.appendChild(explanationCard("original", original, topK));
  if (whatIf) {
    const changed = changedConditions(original.context, whatIf.explanation.context);
    const card = explanationCard("what-if", whatIf.explanation, topK, changed);
    card.prepend(leafBadge(whatIf.leaf_changed));
    root.appendChild(card);
  }
  return root;
}

function formatNumber(v: number): string {
  return Math.abs(v) >= 1e4 || (v !== 0 && Math.abs(v) < 1e-4)
    ? v.toExponential(3)
    : String(Math.round(v * 1e4) / 1e4);
}
