import type { Attribution, Explanation, SchemaSpec, TreeSpec } from "../src/api";

export const schema: SchemaSpec = {
  columns: [
    { name: "x1", kind: "numerical" },
    { name: "x2", kind: "numerical" },
    { name: "color", kind: "categorical", categories: ["r", "g", "b"] },
  ],
};

export const tree: TreeSpec = {
  format: "lmte-tree/1",
  task: "classification",
  feature_names: ["x1", "x2", "color=r", "color=g", "color=b"],
  nodes: [
    { id: 0, depth: 0, n_rows: 100, feature_index: 0, threshold: 0.5, left: 1, right: 2 },
    { id: 1, depth: 1, n_rows: 60 },
    { id: 2, depth: 1, n_rows: 40 },
  ],
};

export function attribution(feature: string, value: number,
                            category: string | null = null): Attribution {
  return {
    feature,
    encoded_feature: category ? `${feature}=${category}` : feature,
    coefficient: value,
    encoded_value: 1,
    value,
    category,
  };
}

export function explanation(overrides: Partial<Explanation> = {}): Explanation {
  const attrs = [
    attribution("x1", 0.9),
    attribution("x2", -0.5),
    attribution("color", 0.2, "g"),
  ];
  return {
    test_point: { x1: 0.2, x2: 1.4, color: "g" },
    surrogate_prediction: 0.82,
    oracle_prediction: 1.0,
    context: [{ feature: "x1", op: "<=", value: 0.5 }],
    context_text: "x1 <= 0.5",
    attributions: attrs,
    top_attributions: attrs,
    intercept: 0.1,
    leaf_id: 1,
    fidelity: 0.97,
    task: "classification",
    ...overrides,
  };
}
