/**
 * DOM glue: wires the session flow to the page.
 *
 * Left/right arrow keys pick the corresponding image once both candidates
 * are visible and the minimum viewing time has passed.  The session id is
 * kept in sessionStorage so a reload resumes at the server's cursor.
 */

import { SessionFlow, FlowView } from "./flow.js";
import { ProtocolClient } from "./protocol.js";

const client = new ProtocolClient("");

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function subjectId(): string {
  const params = new URLSearchParams(window.location.search);
  const fromQuery = params.get("subject");
  if (fromQuery) return fromQuery;
  let stored = window.localStorage.getItem("pcsample.subject");
  if (!stored) {
    stored = `subject-${Math.random().toString(36).slice(2, 8)}`;
    window.localStorage.setItem("pcsample.subject", stored);
  }
  return stored;
}

function render(view: FlowView): void {
  const status = el<HTMLElement>("status");
  const arena = el<HTMLElement>("arena");
  const done = el<HTMLElement>("done");
  const banner = el<HTMLElement>("banner");

  banner.hidden = view.state !== "error";
  if (view.state === "error") {
    banner.textContent = `Connection problem: ${view.error ?? "unknown"}. Press R to retry.`;
  }
  done.hidden = view.state !== "completed";
  arena.hidden = view.state === "completed";

  if (view.state === "completed") {
    status.textContent = `All ${view.total} comparisons done. Thank you!`;
    done.textContent =
      "Session complete. The operator can export the collected judgments " +
      "from /api/v1/export and score them with `pcsample aggregate`.";
    return;
  }
  if (view.pair) {
    status.textContent = `Pair ${view.cursor + 1} / ${view.total}`;
  } else {
    status.textContent = "Loading...";
  }
}

function showPair(flow: SessionFlow, view: FlowView): void {
  if (!view.pair) return;
  const reference = el<HTMLImageElement>("reference");
  const left = el<HTMLImageElement>("left");
  const right = el<HTMLImageElement>("right");
  let pending = 2;
  const loaded = () => {
    pending -= 1;
    if (pending === 0) flow.imagesLoaded();
  };
  left.onload = loaded;
  right.onload = loaded;
  left.onerror = loaded; // a broken image must not wedge the session
  right.onerror = loaded;
  reference.src = client.imageUrl(view.pair.reference_image!);
  left.src = client.imageUrl(view.pair.left!);
  right.src = client.imageUrl(view.pair.right!);
}

async function boot(): Promise<void> {
  const stored = window.sessionStorage.getItem("pcsample.session") ?? undefined;
  const flow = new SessionFlow(client, {
    subjectId: subjectId(),
    sessionId: stored,
  });

  let lastCursor = -1;
  flow.onChange((view) => {
    render(view);
    if (view.state === "showing" && view.cursor !== lastCursor) {
      lastCursor = view.cursor;
      showPair(flow, view);
    }
  });

  window.addEventListener("keydown", (event: KeyboardEvent) => {
    if (event.key === "ArrowLeft") void flow.choose("left");
    else if (event.key === "ArrowRight") void flow.choose("right");
    else if (event.key === "r" || event.key === "R") void flow.refresh();
  });
  el<HTMLElement>("pick-left").addEventListener("click", () => void flow.choose("left"));
  el<HTMLElement>("pick-right").addEventListener("click", () => void flow.choose("right"));

  const view = await flow.start();
  if (flow.session) {
    window.sessionStorage.setItem("pcsample.session", flow.session);
  }
  render(view);
}

void boot();
