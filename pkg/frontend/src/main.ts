// Browser bootstrap: resolve the service URL, build the app, wire the
// static controls (file load, k selector, export/import, share link).

import { ServiceClient } from "./api.js";
import { AdvisorApp } from "./app.js";
import type { SessionExport } from "./state.js";

declare global {
  interface Window {
    SERVICE_URL?: string;
    advisorApp?: AdvisorApp;
  }
}

function serviceUrl(): string {
  const fromQuery = new URLSearchParams(window.location.search).get("service");
  return fromQuery ?? window.SERVICE_URL ?? "http://127.0.0.1:8765";
}

function el<T extends Element>(selector: string): T {
  const found = document.querySelector<T>(selector);
  if (!found) throw new Error(`missing element ${selector}`);
  return found;
}

async function boot(): Promise<void> {
  const app = new AdvisorApp(new ServiceClient(serviceUrl()), {
    svg: el<SVGSVGElement>("#graph"),
    panel: el<HTMLElement>("#panel"),
    chips: el<HTMLElement>("#chips"),
    toasts: el<HTMLElement>("#toasts"),
    banner: el<HTMLElement>("#banner"),
    modelInfo: el<HTMLElement>("#model-info"),
  });
  window.advisorApp = app;
  await app.start();

  const fragment = window.location.hash.slice(1);
  if (fragment) {
    try {
      app.restoreFromFragment(fragment);
    } catch {
      // a stale or foreign fragment is ignored
    }
  }

  el<HTMLInputElement>("#assembly-file").addEventListener("change", async (event) => {
    const input = event.target as HTMLInputElement;
    const file = input.files?.[0];
    if (!file) return;
    try {
      const doc = JSON.parse(await file.text());
      await app.loadAssembly(doc);
      window.location.hash = app.sessionUrlFragment();
    } catch (error) {
      el<HTMLElement>("#banner").textContent =
        error instanceof Error ? `invalid file: ${error.message}` : "invalid file";
    }
  });

  const kSelect = el<HTMLSelectElement>("#k-select");
  kSelect.addEventListener("change", () => app.setK(Number(kSelect.value)));

  el<HTMLButtonElement>("#export-button").addEventListener("click", () => {
    const doc = app.exportSession();
    const blob = new Blob([JSON.stringify(doc, null, 1)], { type: "application/json" });
    const link = document.createElement("a");
    link.href = URL.createObjectURL(blob);
    link.download = "matgraph-session.json";
    link.click();
    URL.revokeObjectURL(link.href);
  });

  el<HTMLInputElement>("#import-file").addEventListener("change", async (event) => {
    const input = event.target as HTMLInputElement;
    const file = input.files?.[0];
    if (!file) return;
    try {
      app.importSession(JSON.parse(await file.text()) as SessionExport);
      window.location.hash = app.sessionUrlFragment();
    } catch (error) {
      el<HTMLElement>("#banner").textContent =
        error instanceof Error ? `invalid session: ${error.message}` : "invalid session";
    }
  });
}

void boot();
