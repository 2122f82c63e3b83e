/** Browser bootstrap: wires the view model to the document.
 *
 * The service base URL comes from `?service=` in the page URL, falling back
 * to the same host on the default service port.
 */

import { HttpApiClient } from "./api.js";
import { renderBanner, renderForm, renderPrediction } from "./render.js";
import { ViewModel } from "./viewmodel.js";

function serviceBaseUrl(): string {
  const fromQuery = new URLSearchParams(window.location.search).get("service");
  return fromQuery ?? `http://${window.location.hostname || "127.0.0.1"}:8787`;
}

function mount(root: HTMLElement, vm: ViewModel): void {
  const parts: string[] = [];
  if (vm.banner !== null) parts.push(renderBanner(vm.banner));
  if (vm.schema !== null) {
    parts.push(renderForm(vm.schema, vm.form, vm.fieldErrors));
    if (vm.lastResponse !== null) {
      parts.push(
        renderPrediction(
          vm.lastResponse,
          vm.schema.columns.map((c) => c.name),
        ),
      );
    }
    parts.push(
      `<div class="history">applied what-ifs: ${vm.history.length}</div>`,
    );
  }
  root.innerHTML = parts.join("");
}

export function start(root: HTMLElement): ViewModel {
  const client = new HttpApiClient(serviceBaseUrl());
  const vm = new ViewModel(client);
  vm.onChange(() => mount(root, vm));

  root.addEventListener("change", (event) => {
    const el = event.target as HTMLInputElement | HTMLSelectElement;
    if (el.name) vm.setField(el.name, el.value);
  });
  root.addEventListener("submit", (event) => {
    event.preventDefault();
    if (!vm.busy) void vm.submit();
  });
  root.addEventListener("click", (event) => {
    const el = (event.target as HTMLElement).closest("[data-action]");
    if (!(el instanceof HTMLElement)) return;
    const action = el.dataset.action;
    if (action === "retry") {
      void vm.loadSchema();
    } else if (action === "apply" && !vm.busy) {
      const target = el.dataset.target;
      const card = vm.lastResponse?.counterfactuals.find(
        (c) => c.target_class === target,
      );
      if (card) void vm.applyCounterfactual(card);
    }
  });

  void vm.loadSchema();
  return vm;
}

const rootElement = typeof document !== "undefined"
  ? document.getElementById("app")
  : null;
if (rootElement) start(rootElement);
