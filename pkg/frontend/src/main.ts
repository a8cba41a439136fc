// Page bootstrap and event wiring. At most one what-if request is in
// flight; a newer submission aborts the previous one.

import { ApiClient, ApiError } from "./api";
import {
  UiState,
  canSubmit,
  clearOverrides,
  initialState,
  setTopK,
  splitBreadcrumb,
  stageOverride,
  withWhatIf,
} from "./state";
import { comparisonView, featureEditor } from "./render";

let state: UiState | null = null;
let client: ApiClient | null = null;
let inflight: AbortController | null = null;

function $(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node;
}

function banner(message: string | null): void {
  const box = $("banner");
  box.textContent = message ?? "";
  box.classList.toggle("visible", message !== null);
}

function redraw(): void {
  const editorBox = $("editor");
  const viewBox = $("views");
  const breadcrumbBox = $("breadcrumb");
  editorBox.replaceChildren();
  viewBox.replaceChildren();
  breadcrumbBox.replaceChildren();
  if (!state) return;

  breadcrumbBox.textContent = `tree splits: ${splitBreadcrumb(state.tree).join("  |  ") || "none"}`;
  editorBox.appendChild(featureEditor(state.schema, state.point, state.overrides,
    (feature, raw) => {
      if (!state) return;
      try {
        state = stageOverride(state, feature, raw);
        banner(null);
      } catch (err) {
        banner(String(err instanceof Error ? err.message : err));
      }
      redraw();
    }));

  const submit = $("submit") as HTMLButtonElement;
  submit.disabled = !canSubmit(state);
  viewBox.appendChild(comparisonView(state.original, state.whatIf, state.topK));
}

async function loadSession(): Promise<void> {
  const base = ($("base-url") as HTMLInputElement).value || window.location.origin;
  const sessionId = ($("session-id") as HTMLInputElement).value.trim();
  if (!sessionId) {
    banner("enter a session id");
    return;
  }
  client = new ApiClient(base);
  try {
    const [schema, tree] = await Promise.all([
      client.getSchema(sessionId),
      client.getTree(sessionId),
    ]);
    const topK = Number((($("top-k") as HTMLInputElement).value) || 5);
    const original = await client.explain(sessionId, topK);
    state = initialState(sessionId, schema, tree, original, topK);
    banner(null);
  } catch (err) {
    state = null;
    banner(err instanceof ApiError ? `${err.code}: ${err.message}` : String(err));
  }
  redraw();
}

async function submitWhatIf(): Promise<void> {
  if (!state || !client || !canSubmit(state)) return;
  inflight?.abort();
  inflight = new AbortController();
  try {
    const result = await client.whatIf(state.sessionId, state.overrides,
      state.topK, inflight.signal);
    state = withWhatIf(state, result);
    banner(null);
  } catch (err) {
    if (err instanceof DOMException && err.name === "AbortError") return;
    banner(err instanceof ApiError ? `${err.code}: ${err.message}` : String(err));
  } finally {
    inflight = null;
  }
  redraw();
}

export function bootstrap(): void {
  $("load").addEventListener("click", () => void loadSession());
  $("submit").addEventListener("click", () => void submitWhatIf());
  $("reset").addEventListener("click", () => {
    if (state) {
      state = clearOverrides(state);
      redraw();
    }
  });
  ($("top-k") as HTMLInputElement).addEventListener("change", (ev) => {
    if (!state) return;
    try {
      state = setTopK(state, Number((ev.target as HTMLInputElement).value));
      redraw();
    } catch (err) {
      banner(String(err instanceof Error ? err.message : err));
    }
  });
  const params = new URLSearchParams(window.location.search);
  if (params.get("session")) {
    ($("session-id") as HTMLInputElement).value = params.get("session")!;
    void loadSession();
  }
}

if (typeof document !== "undefined" && document.getElementById("load")) {
  bootstrap();
}
