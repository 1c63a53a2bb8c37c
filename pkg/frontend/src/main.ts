// Entry point: wires the card and summary views to the service.
// Query parameters: ?session=<id>&annotator=<name>.

import { ApiError, LabelApi } from "./api.js";
import { renderErrorBanner, renderPatchCard } from "./card.js";
import type { CardHandle } from "./card.js";
import { presenceRates, renderSummary } from "./summary.js";
import type { NextPatch } from "./types.js";

const api = new LabelApi("");

function params(): { session: string; annotator: string } {
  const q = new URLSearchParams(window.location.search);
  return {
    session: q.get("session") ?? "default",
    annotator: q.get("annotator") ?? "anonymous",
  };
}

async function showSummary(
  root: HTMLElement,
  session: string,
  submitted: number[][],
  classes: string[],
): Promise<void> {
  const [stats, consensus] = await Promise.all([
    api.stats(session),
    api.consensus(session),
  ]);
  const rates = submitted.length > 0 ? presenceRates(submitted, classes) : null;
  renderSummary(root, stats, consensus, rates);
}

async function run(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");
  const { session, annotator } = params();
  const progress = document.getElementById("progress");
  const submitted: number[][] = [];
  let classes: string[] = [];
  let card: CardHandle | null = null;

  const step = async (): Promise<void> => {
    let next: NextPatch;
    try {
      next = await api.next(session, annotator);
    } catch (err) {
      const message =
        err instanceof ApiError ? err.message : "labeling service unreachable";
      renderErrorBanner(root, message, () => void step());
      return;
    }
    if (next.classes) classes = next.classes;
    if (progress) progress.textContent = `${next.labeled} / ${next.total}`;
    if (next.done || !next.patch_id || !next.image_url) {
      await showSummary(root, session, submitted, classes);
      return;
    }
    card?.dispose();
    card = renderPatchCard(
      root,
      next.patch_id,
      api.imageUrl(next.image_url),
      next.classes ?? [],
      (labeling) => {
        // The log is the source of truth: submit, then re-fetch state.
        api
          .submit(session, labeling.submission(annotator))
          .then(() => {
            submitted.push(labeling.presence());
            void step();
          })
          .catch((err: unknown) => {
            const message =
              err instanceof ApiError ? err.message : "submit failed";
            renderErrorBanner(root, message, () => void step());
          });
      },
    );
  };

  await step();
}

void run();


