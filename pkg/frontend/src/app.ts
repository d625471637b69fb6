/** Browser entry point: wires the view model to the DOM and polls the API. */

import { ApiClient, resolveBaseUrl } from "./client.js";
import { ConsoleViewModel } from "./viewmodel.js";
import {
  renderAccuracyView,
  renderCalibrationHistory,
  renderEfficiencyView,
  renderErrorToast,
  renderPowerView,
  renderRecommendations,
  renderStatusBar,
} from "./views.js";

declare global {
  interface Window {
    DCTWIN_API_BASE?: string;
  }
}

function operatorName(): string {
  const input = document.getElementById("operator") as HTMLInputElement | null;
  const name = input?.value.trim();
  return name || "operator";
}

function render(root: HTMLElement, vm: ConsoleViewModel): void {
  const parts: string[] = [];
  parts.push(renderErrorToast(vm.lastError));
  if (vm.snapshot) {
    parts.push(renderStatusBar(vm.snapshot));
  } else {
    parts.push(`<p class="placeholder">Waiting for the twin API&hellip;</p>`);
  }
  parts.push(
    renderPowerView(vm.seriesPoints("power_predicted"), vm.seriesPoints("power_actual")),
    renderAccuracyView(vm.mapeSeries(), vm.thresholdPercent(), vm.biasByWindow()),
    renderEfficiencyView(vm.seriesPoints("tflops"), vm.seriesPoints("efficiency")),
    renderCalibrationHistory(vm.calibrationRecords()),
    renderRecommendations(vm.recommendations, vm.drafts),
  );
  root.innerHTML = parts.join("");
}

export function startApp(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app element");

  const base = resolveBaseUrl(window, window.location.search, window.location.origin);
  const client = new ApiClient(base);
  const vm = new ConsoleViewModel();

  try {
    const saved = localStorage.getItem("dctwin-operator");
    const input = document.getElementById("operator") as HTMLInputElement | null;
    if (saved && input) input.value = saved;
    input?.addEventListener("change", () => {
      localStorage.setItem("dctwin-operator", input.value.trim());
    });
  } catch {
    /* storage unavailable; the name just will not persist */
  }

  root.addEventListener("click", (event) => {
    const target = event.target as HTMLElement | null;
    const action = target?.dataset["action"];
    const id = target?.dataset["id"];
    if (!action || !id) return;
    const done = () => render(root, vm);
    if (action === "approve" || action === "reject") {
      const decided = vm.decide(client, id, action, operatorName());
      render(root, vm); // the draft is set before the first await
      void decided.then(done);
    } else if (action === "retry") {
      void vm.retryDraft(client, id, operatorName()).then(done);
    } else if (action === "cancel-draft") {
      vm.cancelDraft(id);
      render(root, vm);
    }
  });

  const tick = async (): Promise<void> => {
    await vm.refresh(client);
    render(root, vm);
    setTimeout(() => void tick(), vm.pollIntervalMs());
  };
  void tick();
}

startApp();
