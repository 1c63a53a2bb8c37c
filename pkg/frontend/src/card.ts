// Interactive patch card: the image at native resolution (click to
// zoom), one yes/no toggle pair per class in taxonomy order, and a
// submit button that unlocks only once every class is decided.
// Shortcuts: digits 1-9 toggle classes, Enter submits.

import { PatchLabeling } from "./session.js";
import type { Clock } from "./session.js";

export interface CardHandle {
  labeling: PatchLabeling;
  element: HTMLElement;
  submit: HTMLButtonElement;
  dispose: () => void;
}

export function renderPatchCard(
  container: HTMLElement,
  patchId: string,
  imageUrl: string,
  classes: string[],
  onSubmit: (labeling: PatchLabeling) => void,
  clock?: Clock,
): CardHandle {
  const labeling = new PatchLabeling(patchId, classes, clock);
  const card = document.createElement("div");
  card.className = "card";

  const title = document.createElement("div");
  title.className = "card-title";
  title.textContent = patchId;
  card.append(title);

  const img = document.createElement("img");
  img.className = "patch-image";
  img.alt = `patch ${patchId}`;
  img.src = imageUrl;
  img.addEventListener("click", () => img.classList.toggle("zoomed"));
  card.append(img);

  const prompt = document.createElement("p");
  prompt.className = "prompt";
  prompt.hidden = true;

  const rows = document.createElement("div");
  rows.className = "class-rows";
  const buttons: { yes: HTMLButtonElement; no: HTMLButtonElement }[] = [];

  const refresh = () => {
    classes.forEach((_, k) => {
      const state = labeling.state(k);
      const pair = buttons[k];
      if (!pair) return;
      pair.yes.classList.toggle("active", state === "present");
      pair.no.classList.toggle("active", state === "absent");
    });
    submit.disabled = !labeling.complete;
    if (labeling.complete) prompt.hidden = true;
  };

  classes.forEach((name, k) => {
    const row = document.createElement("div");
    row.className = "class-row";
    const label = document.createElement("span");
    label.className = "class-name";
    label.textContent = `${k + 1}. ${name}`;
    const yes = document.createElement("button");
    yes.className = "toggle yes";
    yes.textContent = "✓";
    yes.addEventListener("click", () => {
      labeling.set(k, "present");
      refresh();
    });
    const no = document.createElement("button");
    no.className = "toggle no";
    no.textContent = "×";
    no.addEventListener("click", () => {
      labeling.set(k, "absent");
      refresh();
    });
    row.append(label, yes, no);
    rows.append(row);
    buttons.push({ yes, no });
  });
  card.append(rows);

  const submit = document.createElement("button");
  submit.className = "submit";
  submit.textContent = "Submit (Enter)";
  submit.disabled = true;
  submit.addEventListener("click", () => {
    if (!labeling.complete) {
      prompt.textContent = `Decide every class first: ${labeling.unsetClasses.join(", ")}`;
      prompt.hidden = false;
      return;
    }
    onSubmit(labeling);
  });
  card.append(submit, prompt);

  const onKey = (event: KeyboardEvent) => {
    if (event.key >= "1" && event.key <= "9") {
      const k = Number(event.key) - 1;
      if (k < classes.length) {
        labeling.cycle(k);
        refresh();
        event.preventDefault();
      }
    } else if (event.key === "Enter") {
      if (labeling.complete) {
        onSubmit(labeling);
        event.preventDefault();
      } else {
        prompt.textContent = `Decide every class first: ${labeling.unsetClasses.join(", ")}`;
        prompt.hidden = false;
      }
    }
  };
  document.addEventListener("keydown", onKey);

  container.replaceChildren(card);
  // Timer starts once the pixels are actually on screen.
  if (img.complete) {
    labeling.display();
  } else {
    img.addEventListener("load", () => labeling.display(), { once: true });
    img.addEventListener("error", () => labeling.display(), { once: true });
  }

  return {
    labeling,
    element: card,
    submit,
    dispose: () => document.removeEventListener("keydown", onKey),
  };
}

export function renderErrorBanner(
  container: HTMLElement,
  message: string,
  onRetry: () => void,
): void {
  const banner = document.createElement("div");
  banner.className = "banner error";
  const text = document.createElement("span");
  text.textContent = message;
  const retry = document.createElement("button");
  retry.textContent = "Retry";
  retry.addEventListener("click", onRetry);
  banner.append(text, retry);
  container.replaceChildren(banner);
}
