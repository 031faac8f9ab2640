import { AnnotationApi, Axis } from "./api.js";
import { renderOverlay } from "./overlay.js";
import { AnnotatorStore, ViewState } from "./state.js";

// ============================================
// DOM WIRING
// ============================================

const AXES: Axis[] = ["x", "y", "z"];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) {
    node.className = className;
  }
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

function nudgeButton(
  label: string,
  disabled: boolean,
  onClick: () => void,
): HTMLButtonElement {
  const btn = el("button", "nudge", label);
  btn.disabled = disabled;
  btn.addEventListener("click", onClick);
  return btn;
}

function renderControls(state: ViewState, store: AnnotatorStore): HTMLElement {
  const panel = el("div", "controls");
  const disabled = state.readOnly || state.busy;

  const rotRow = el("div", "row");
  rotRow.appendChild(el("span", "label", `rotate ±${state.stepDeg}°`));
  for (const axis of AXES) {
    rotRow.appendChild(
      nudgeButton(`${axis}−`, disabled, () => store.nudgeRotation(axis, -1)),
    );
    rotRow.appendChild(
      nudgeButton(`${axis}+`, disabled, () => store.nudgeRotation(axis, 1)),
    );
  }
  panel.appendChild(rotRow);

  const transRow = el("div", "row");
  transRow.appendChild(el("span", "label", `move ±${state.stepCm} cm`));
  for (const axis of AXES) {
    transRow.appendChild(
      nudgeButton(`${axis}−`, disabled, () => store.nudgeTranslation(axis, -1)),
    );
    transRow.appendChild(
      nudgeButton(`${axis}+`, disabled, () => store.nudgeTranslation(axis, 1)),
    );
  }
  panel.appendChild(transRow);

  const stepRow = el("div", "row");
  const degInput = el("input") as HTMLInputElement;
  degInput.type = "number";
  degInput.step = "0.1";
  degInput.value = String(state.stepDeg);
  const cmInput = el("input") as HTMLInputElement;
  cmInput.type = "number";
  cmInput.step = "0.1";
  cmInput.value = String(state.stepCm);
  const apply = (): void =>
    store.setSteps(Number(degInput.value) || 0, Number(cmInput.value) || 0);
  degInput.addEventListener("change", apply);
  cmInput.addEventListener("change", apply);
  stepRow.append(
    el("span", "label", "step (deg / cm)"),
    degInput,
    cmInput,
  );
  panel.appendChild(stepRow);
  return panel;
}

function renderPoseReadout(state: ViewState): HTMLElement {
  const box = el("pre", "pose-readout");
  box.textContent = state.pose === null
    ? "no pose loaded"
    : JSON.stringify({ revision: state.revision, ...state.pose }, null, 2);
  return box;
}

function renderGrid(state: ViewState): HTMLElement {
  const grid = el("div", "keyframe-grid");
  for (const kf of state.keyframes) {
    const cell = el("figure", "keyframe");
    const img = el("img") as HTMLImageElement;
    img.src = kf.image_ref;
    img.alt = `frame ${kf.index}`;
    cell.appendChild(img);
    const overlay = state.overlays.find((o) => o.frame === kf.index);
    if (overlay !== undefined) {
      cell.appendChild(renderOverlay(overlay));
    }
    cell.appendChild(el("figcaption", undefined, `frame ${kf.index}`));
    grid.appendChild(cell);
  }
  return grid;
}

export function render(
  root: HTMLElement,
  state: ViewState,
  store: AnnotatorStore,
): void {
  root.replaceChildren();
  if (state.readOnly) {
    root.appendChild(
      el("div", "banner banner-error", "Service unreachable — read-only."),
    );
  }
  if (state.notice !== null && !state.readOnly) {
    const note = el("div", "banner banner-notice", state.notice);
    const dismiss = el("button", "dismiss", "×");
    dismiss.addEventListener("click", () => store.dismissNotice());
    note.appendChild(dismiss);
    root.appendChild(note);
  }
  root.appendChild(renderGrid(state));
  root.appendChild(renderControls(state, store));
  root.appendChild(renderPoseReadout(state));
}

export function boot(objectId: string): AnnotatorStore {
  const root = document.getElementById("app");
  if (root === null) {
    throw new Error("missing #app mount point");
  }
  const store = new AnnotatorStore(new AnnotationApi(""));
  store.subscribe((state) => render(root, state, store));
  void store.init(objectId);
  return store;
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  const params = new URLSearchParams(window.location.search);
  boot(params.get("object") ?? "mug-0");
}
