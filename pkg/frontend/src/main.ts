/** DOM wiring for the workbench.
 *
 * All mutable state sits in the single App record below; panels are
 * re-rendered wholesale from the latest service payloads after every
 * action (per-action fetch, no push channel).
 */
import { ApiClient, ApiError } from "./api.js";
import type { SessionSummary, ShardableValue } from "./api.js";
import {
  DEFAULT_API,
  Draft,
  autoTactic,
  decodeChoice,
  emptyDraft,
  formatHash,
  lastIndex,
  manualTactic,
  meshAxes,
  parseHash,
  setAxis,
  setChoice,
} from "./state.js";
import {
  renderComposer,
  renderConflicts,
  renderCreateForm,
  renderHeader,
  renderIr,
  renderTimeline,
} from "./render.js";

interface App {
  client: ApiClient;
  summary: SessionSummary | null;
  shardable: ShardableValue[];
  selected: number;
  draft: Draft;
  autoBudget: number;
  error: string | null;
}

const app: App = {
  client: new ApiClient(DEFAULT_API),
  summary: null,
  shardable: [],
  selected: -1,
  draft: emptyDraft(),
  autoBudget: 200,
  error: null,
};

function byId(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el;
}

function inputValue(id: string): string {
  return (byId(id) as HTMLInputElement | HTMLTextAreaElement).value;
}

function paint(): void {
  const header = byId("header");
  const create = byId("create-panel");
  const workbench = byId("workbench");
  if (!app.summary) {
    header.innerHTML = `<span class="session">no session</span>`;
    create.hidden = false;
    workbench.hidden = true;
    create.innerHTML = renderCreateForm(app.error);
    return;
  }
  create.hidden = true;
  workbench.hidden = false;
  header.innerHTML = renderHeader(app.summary);
  byId("ir").innerHTML = renderIr(app.summary, app.selected);
  byId("composer").innerHTML = renderComposer({
    axes: meshAxes(app.summary.mesh),
    values: app.shardable,
    draft: app.draft,
    autoBudget: app.autoBudget,
    error: app.error,
  });
  byId("timeline").innerHTML = renderTimeline(app.summary, app.selected);
  byId("conflicts").innerHTML = renderConflicts(app.summary, app.selected);
}

function setSession(summary: SessionSummary, shardable: ShardableValue[]): void {
  app.summary = summary;
  app.shardable = shardable;
  app.selected = lastIndex(summary);
  if (app.draft.axis === "") {
    app.draft = setAxis(app.draft, meshAxes(summary.mesh)[0] ?? "");
  }
  const route = parseHash(location.hash);
  location.hash = formatHash({ sid: summary.id, api: route.api });
}

async function refresh(): Promise<void> {
  if (!app.summary) return;
  const sid = app.summary.id;
  const [summary, shardable] = await Promise.all([
    app.client.getSession(sid),
    app.client.shardable(sid),
  ]);
  setSession(summary, shardable);
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return `${err.status}: ${err.message}`;
  return String(err);
}

async function applyDraft(): Promise<void> {
  if (!app.summary) return;
  try {
    await app.client.applyTactic(app.summary.id, manualTactic(app.draft));
    // Commit: the draft is spent. On error it stays put for correction.
    app.draft = emptyDraft(app.draft.axis);
    app.error = null;
    await refresh();
  } catch (err) {
    app.error = describe(err);
  }
  paint();
}

async function applyAuto(): Promise<void> {
  if (!app.summary) return;
  try {
    const axes = meshAxes(app.summary.mesh);
    await app.client.applyTactic(app.summary.id, autoTactic(axes, app.autoBudget));
    app.error = null;
    await refresh();
  } catch (err) {
    app.error = describe(err);
  }
  paint();
}

async function createSession(): Promise<void> {
  const moduleText = inputValue("create-module").trim();
  const paramsText = inputValue("create-params").trim();
  try {
    const params = paramsText === "" ? {} : JSON.parse(paramsText);
    const req = moduleText !== ""
      ? { module: moduleText, params }
      : { model: inputValue("create-model").trim(), params };
    const mesh = inputValue("create-mesh").trim();
    const machine = inputValue("create-machine").trim();
    const summary = await app.client.createSession({
      ...req,
      ...(mesh !== "" ? { mesh } : {}),
      ...(machine !== "" ? { machine } : {}),
    });
    const shardable = await app.client.shardable(summary.id);
    app.error = null;
    setSession(summary, shardable);
  } catch (err) {
    app.error = describe(err);
  }
  paint();
}

async function forkSession(): Promise<void> {
  if (!app.summary) return;
  try {
    const summary = await app.client.fork(app.summary.id);
    const shardable = await app.client.shardable(summary.id);
    app.error = null;
    setSession(summary, shardable);
  } catch (err) {
    app.error = describe(err);
  }
  paint();
}

async function boot(): Promise<void> {
  const route = parseHash(location.hash);
  app.client = new ApiClient(route.api);
  if (route.sid) {
    try {
      const [summary, shardable] = await Promise.all([
        app.client.getSession(route.sid),
        app.client.shardable(route.sid),
      ]);
      setSession(summary, shardable);
    } catch (err) {
      app.summary = null;
      app.error = describe(err);
    }
  }
  paint();
}

function wire(): void {
  byId("header").addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    if (target.id === "fork-session") void forkSession();
    if (target.id === "new-session") {
      app.summary = null;
      app.error = null;
      const route = parseHash(location.hash);
      location.hash = formatHash({ sid: null, api: route.api });
      paint();
    }
  });

  byId("create-panel").addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    if (target.id === "create-session") void createSession();
  });

  byId("composer").addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    if (target.id === "apply-tactic") void applyDraft();
    if (target.id === "apply-auto") void applyAuto();
    if (target.id === "clear-draft") {
      app.draft = emptyDraft(app.draft.axis);
      app.error = null;
      paint();
    }
  });

  byId("composer").addEventListener("change", (event) => {
    const target = event.target as HTMLElement;
    if (target.id === "axis-picker") {
      app.draft = setAxis(app.draft, (target as HTMLSelectElement).value);
      paint();
    } else if (target.id === "auto-budget") {
      app.autoBudget = Number((target as HTMLInputElement).value) || 1;
    } else if (target.classList.contains("choice")) {
      const select = target as HTMLSelectElement;
      const name = select.dataset.value ?? "";
      app.draft = setChoice(app.draft, name, decodeChoice(select.value));
    }
  });

  byId("timeline").addEventListener("click", (event) => {
    const row = (event.target as HTMLElement).closest("tr[data-index]");
    if (!row || !app.summary) return;
    app.selected = Number((row as HTMLElement).dataset.index);
    paint();
  });

  window.addEventListener("hashchange", () => {
    const route = parseHash(location.hash);
    if (route.api !== app.client.base) void boot();
    else if (route.sid && route.sid !== app.summary?.id) void boot();
    else if (!route.sid && app.summary) {
      app.summary = null;
      paint();
    }
  });
}

wire();
void boot();
