// DOM wiring for the cockpit: dialogue panel, telemetry gauge, controls.

import { CockpitClient, UiState } from "./client.js";

const GAUGE_MAX_MPH = 85;

export interface CockpitApp {
  client: CockpitClient;
  render(state: UiState): void;
}

function el<T extends HTMLElement>(doc: Document, id: string): T {
  const node = doc.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export function bootstrap(doc: Document, url: string, client?: CockpitClient): CockpitApp {
  const banner = el<HTMLElement>(doc, "banner");
  const dialogue = el<HTMLElement>(doc, "dialogue");
  const speedValue = el<HTMLElement>(doc, "speed-value");
  const speedBar = el<HTMLElement>(doc, "speed-bar");
  const targetMarker = el<HTMLElement>(doc, "target-marker");
  const targetValue = el<HTMLElement>(doc, "target-value");
  const sceneChips = el<HTMLElement>(doc, "scene-chips");
  const simClock = el<HTMLElement>(doc, "sim-clock");
  const input = el<HTMLInputElement>(doc, "query-input");
  const sendBtn = el<HTMLButtonElement>(doc, "send-btn");
  const confirmBtn = el<HTMLButtonElement>(doc, "confirm-btn");
  const notice = el<HTMLElement>(doc, "notice");

  const cockpit = client ?? new CockpitClient({ url });

  function render(state: UiState): void {
    banner.textContent =
      state.connection === "ready"
        ? ""
        : state.connection === "connecting"
          ? "connecting…"
          : "connection lost — reconnecting…";
    banner.className = `banner ${state.connection}`;

    dialogue.textContent = "";
    for (const entry of state.dialogue) {
      const bubble = doc.createElement("div");
      bubble.className = `bubble ${entry.role}${entry.isError ? " error" : ""}`;
      const text = doc.createElement("p");
      text.textContent = entry.text;
      bubble.appendChild(text);
      if (entry.role === "assistant" && entry.serviceType !== undefined) {
        const badges = doc.createElement("div");
        badges.className = "badges";
        const service = doc.createElement("span");
        service.className = "badge service";
        service.textContent = entry.serviceType;
        const latency = doc.createElement("span");
        latency.className = "badge latency";
        latency.textContent = `${entry.latencyMs} ms`;
        badges.appendChild(service);
        badges.appendChild(latency);
        bubble.appendChild(badges);
      }
      dialogue.appendChild(bubble);
    }
    dialogue.scrollTop = dialogue.scrollHeight;

    const telemetry = state.telemetry;
    if (telemetry) {
      speedValue.textContent = telemetry.speed_mph.toFixed(1);
      const pct = Math.min(100, (100 * telemetry.speed_mph) / GAUGE_MAX_MPH);
      speedBar.style.width = `${pct}%`;
      if (telemetry.acc_enabled) {
        targetMarker.style.display = "block";
        targetMarker.style.left = `${Math.min(100, (100 * telemetry.target_speed_mph) / GAUGE_MAX_MPH)}%`;
        targetValue.textContent = `target ${telemetry.target_speed_mph.toFixed(0)} MPH`;
      } else {
        targetMarker.style.display = "none";
        targetValue.textContent = "";
      }
      sceneChips.textContent = "";
      for (const chip of [telemetry.road_type, telemetry.weather, telemetry.traffic]) {
        const span = doc.createElement("span");
        span.className = "chip";
        span.textContent = chip;
        sceneChips.appendChild(span);
      }
      simClock.textContent = `t = ${telemetry.sim_time_s.toFixed(1)} s`;
    }

    const busy = state.inFlight || state.connection !== "ready";
    input.disabled = busy;
    sendBtn.disabled = busy;
    confirmBtn.style.display = state.pendingProposal ? "inline-block" : "none";
    confirmBtn.disabled = busy;
    notice.textContent = state.notice ?? "";
  }

  cockpit.onChange = render;
  sendBtn.addEventListener("click", () => {
    if (cockpit.sendQuery(input.value)) input.value = "";
  });
  input.addEventListener("keydown", (ev: KeyboardEvent) => {
    if (ev.key === "Enter" && cockpit.sendQuery(input.value)) input.value = "";
  });
  confirmBtn.addEventListener("click", () => cockpit.confirm());

  cockpit.connect();
  render(cockpit.state);
  return { client: cockpit, render };
}

// Auto-start only inside a real page (tests call bootstrap themselves).
const host = globalThis as {
  COCKPIT_AUTOSTART?: boolean;
  location?: Location;
  document?: Document;
};
if (host.COCKPIT_AUTOSTART && host.document && host.location) {
  bootstrap(host.document, `ws://${host.location.host}/session`);
}
