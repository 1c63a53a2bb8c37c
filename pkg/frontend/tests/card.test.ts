// @vitest-environment happy-dom
import { beforeEach, describe, expect, it, vi } from "vitest";

import { renderPatchCard } from "../src/card.js";
import type { PatchLabeling } from "../src/session.js";

const CLASSES = ["TE", "TAS", "NEC", "LYM"];

function setup(onSubmit = vi.fn<(l: PatchLabeling) => void>()) {
  const container = document.createElement("main");
  document.body.append(container);
  const handle = renderPatchCard(
    container,
    "p0",
    "http://example/patch.png",
    CLASSES,
    onSubmit,
    () => 0,
  );
  return { container, handle, onSubmit };
}

beforeEach(() => {
  document.body.replaceChildren();
});

describe("renderPatchCard", () => {
  it("renders one yes/no toggle pair per class in taxonomy order", () => {
    const { container } = setup();
    const rows = container.querySelectorAll(".class-row");
    expect(rows).toHaveLength(4);
    const names = [...rows].map((r) => r.querySelector(".class-name")?.textContent);
    expect(names).toEqual(["1. TE", "2. TAS", "3. NEC", "4. LYM"]);
    for (const row of rows) {
      expect(row.querySelector(".toggle.yes")?.textContent).toBe("✓");
      expect(row.querySelector(".toggle.no")?.textContent).toBe("×");
    }
  });

  it("blocks submit with an inline prompt until every class is set", () => {
    const { container, handle, onSubmit } = setup();
    const yes = container.querySelectorAll<HTMLButtonElement>(".toggle.yes");
    const no = container.querySelectorAll<HTMLButtonElement>(".toggle.no");
    yes[0]?.click();
    no[1]?.click();
    yes[2]?.click();
    expect(handle.submit.disabled).toBe(true);
    document.dispatchEvent(new KeyboardEvent("keydown", { key: "Enter" }));
    expect(onSubmit).not.toHaveBeenCalled();
    const prompt = container.querySelector<HTMLElement>(".prompt");
    expect(prompt?.hidden).toBe(false);
    expect(prompt?.textContent).toContain("LYM");
    no[3]?.click();
    expect(handle.submit.disabled).toBe(false);
  });

  it("submits the presence vector in the service schema", () => {
    const { container, handle, onSubmit } = setup();
    handle.labeling.display();
    const yes = container.querySelectorAll<HTMLButtonElement>(".toggle.yes");
    const no = container.querySelectorAll<HTMLButtonElement>(".toggle.no");
    yes[0]?.click();
    no[1]?.click();
    no[2]?.click();
    yes[3]?.click();
    handle.submit.click();
    expect(onSubmit).toHaveBeenCalledTimes(1);
    const labeling = onSubmit.mock.calls[0]?.[0] as PatchLabeling;
    expect(labeling.submission("ann")).toMatchObject({
      patch_id: "p0",
      presence: [1, 0, 0, 1],
    });
  });

  it("digit keys toggle presence and Enter submits", () => {
    const { handle, onSubmit } = setup();
    handle.labeling.display();
    for (const key of ["1", "2", "3", "4"]) {
      document.dispatchEvent(new KeyboardEvent("keydown", { key }));
    }
    document.dispatchEvent(new KeyboardEvent("keydown", { key: "2" }));
    document.dispatchEvent(new KeyboardEvent("keydown", { key: "Enter" }));
    expect(onSubmit).toHaveBeenCalledTimes(1);
    const labeling = onSubmit.mock.calls[0]?.[0] as PatchLabeling;
    expect(labeling.presence()).toEqual([1, 0, 1, 1]);
  });

  it("dispose unhooks the keyboard shortcuts", () => {
    const { handle, onSubmit } = setup();
    handle.dispose();
    for (const key of ["1", "2", "3", "4", "Enter"]) {
      document.dispatchEvent(new KeyboardEvent("keydown", { key }));
    }
    expect(onSubmit).not.toHaveBeenCalled();
  });
});
