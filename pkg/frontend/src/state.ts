// Pure UI state and transitions. The server is never mutated; replaying the
// same transitions over the same responses always yields the same state.

import type {
  Condition,
  Explanation,
  SchemaSpec,
  TreeSpec,
  WhatIfResult,
} from "./api";

export interface UiState {
  sessionId: string;
  schema: SchemaSpec;
  tree: TreeSpec;
  point: Record<string, number | string>;
  overrides: Record<string, number | string>;
  original: Explanation;
  whatIf: WhatIfResult | null;
  topK: number;
}

export function initialState(sessionId: string, schema: SchemaSpec, tree: TreeSpec,
                             original: Explanation, topK = 5): UiState {
  return {
    sessionId,
    schema,
    tree,
    point: { ...original.test_point },
    overrides: {},
    original,
    whatIf: null,
    topK,
  };
}

export function columnByName(schema: SchemaSpec, name: string) {
  return schema.columns.find((c) => c.name === name);
}

export function stageOverride(state: UiState, feature: string,
                              raw: string): UiState {
  const col = columnByName(state.schema, feature);
  if (!col) {
    throw new Error(`unknown feature ${feature}`);
  }
  let value: number | string;
  if (col.kind === "numerical") {
    value = Number(raw);
    if (!Number.isFinite(value)) {
      throw new Error(`${feature} needs a finite number`);
    }
  } else {
    if (!col.categories?.includes(raw)) {
      throw new Error(`${feature} has no category ${raw}`);
    }
    value = raw;
  }
  const overrides = { ...state.overrides, [feature]: value };
  if (value === state.point[feature]) {
    delete overrides[feature];  // staging the current value is a no-op
  }
  return { ...state, overrides };
}

export function clearOverrides(state: UiState): UiState {
  return { ...state, overrides: {}, whatIf: null };
}

export function canSubmit(state: UiState): boolean {
  return Object.keys(state.overrides).length > 0;
}

export function withWhatIf(state: UiState, result: WhatIfResult): UiState {
  return { ...state, whatIf: result };
}

export function setTopK(state: UiState, topK: number): UiState {
  if (!Number.isInteger(topK) || topK < 1) {
    throw new Error("top-k must be a positive integer");
  }
  return { ...state, topK };
}

export function renderCondition(c: Condition): string {
  return `${c.feature} ${c.op} ${c.value}`;
}

/** Conditions present on one side only, keyed by their rendered text. */
export function changedConditions(before: Condition[],
                                  after: Condition[]): Set<string> {
  const a = new Set(before.map(renderCondition));
  const b = new Set(after.map(renderCondition));
  const changed = new Set<string>();
  for (const text of a) if (!b.has(text)) changed.add(text);
  for (const text of b) if (!a.has(text)) changed.add(text);
  return changed;
}

/** Internal splits of the fitted tree, for the context breadcrumb. */
export function splitBreadcrumb(tree: TreeSpec): string[] {
  return tree.nodes
    .filter((n) => n.feature_index !== undefined && n.threshold !== undefined)
    .map((n) => `${tree.feature_names[n.feature_index!]} <= ${round(n.threshold!)}`);
}

function round(v: number): number {
  return Math.round(v * 1e4) / 1e4;
}
