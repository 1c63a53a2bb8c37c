"""HTTP service collecting patch-level presence labels from annotators.

State is an append-only JSON-lines event log per session; every
statistic is recomputed from the log, so replaying it reproduces the
service state exactly. A single lock serializes writes; reads snapshot
under the same lock.

Endpoints (JSON unless noted):

  GET  /sessions                                  -> session ids
  GET  /session/{sid}                             -> session metadata
  GET  /session/{sid}/next?annotator=a            -> next unlabeled patch
  GET  /session/{sid}/patch/{patch_id}/image      -> PNG bytes
  POST /session/{sid}/label                       -> record one label
  GET  /session/{sid}/stats                       -> timing statistics
  GET  /consensus?session=sid&patches=p1,p2       -> agreement score
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from .datamodel import Manifest, TissueTaxonomy
from .ingest import load_luad_layout


@dataclass
class LabelEvent:
    ts: float
    annotator: str
    patch_id: str
    presence: list[int]
    elapsed_ms: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "ts": self.ts,
                "annotator": self.annotator,
                "patch_id": self.patch_id,
                "presence": self.presence,
                "elapsed_ms": self.elapsed_ms,
            }
        )

    @classmethod
    def from_json(cls, line: str) -> "LabelEvent":
        doc = json.loads(line)
        return cls(
            ts=float(doc["ts"]),
            annotator=str(doc["annotator"]),
            patch_id=str(doc["patch_id"]),
            presence=[int(v) for v in doc["presence"]],
            elapsed_ms=float(doc["elapsed_ms"]),
        )


@dataclass
class LabelSession:
    session_id: str
    taxonomy: TissueTaxonomy
    patches: list[tuple[str, Path]]  # (patch_id, image path), labeling order
    log_path: Path
    events: list[LabelEvent] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._lock = threading.Lock()
        self._by_id = dict(self.patches)
        if self.log_path.exists():
            for line in self.log_path.read_text().splitlines():
                if line.strip():
                    self.events.append(LabelEvent.from_json(line))

    def labeled_by(self, annotator: str) -> set[str]:
        return {e.patch_id for e in self.events if e.annotator == annotator}

    def next_unlabeled(self, annotator: str) -> tuple[str, Path] | None:
        done = self.labeled_by(annotator)
        for pid, path in self.patches:
            if pid not in done:
                return pid, path
        return None

    def record(self, event: LabelEvent, overwrite: bool) -> None:
        with self._lock:
            dup = any(
                e.annotator == event.annotator and e.patch_id == event.patch_id
                for e in self.events
            )
            if dup and not overwrite:
                raise KeyError("duplicate")
            self.log_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.log_path, "a") as fh:
                fh.write(event.to_json() + "\n")
            self.events.append(event)

    def latest_labels(self) -> dict[str, dict[str, list[int]]]:
        """annotator -> patch_id -> presence (last event wins)."""
        out: dict[str, dict[str, list[int]]] = {}
        for e in self.events:
            out.setdefault(e.annotator, {})[e.patch_id] = e.presence
        return out

    def stats(self) -> dict:
        with self._lock:
            events = list(self.events)
        per_annotator: dict[str, dict] = {}
        for e in events:
            agg = per_annotator.setdefault(
                e.annotator, {"labels": 0, "total_elapsed_ms": 0.0}
            )
            agg["labels"] += 1
            agg["total_elapsed_ms"] += e.elapsed_ms
        for agg in per_annotator.values():
            agg["mean_ms_per_patch"] = agg["total_elapsed_ms"] / agg["labels"]
        total = sum(a["total_elapsed_ms"] for a in per_annotator.values())
        count = sum(a["labels"] for a in per_annotator.values())
        return {
            "session_id": self.session_id,
            "labels": count,
            "annotators": sorted(per_annotator),
            "total_elapsed_ms": total,
            "mean_ms_per_patch": total / count if count else None,
            "per_annotator": per_annotator,
        }

    def consensus(self, patch_filter: set[str] | None = None) -> dict:
        """Mean over annotator pairs of the agreeing (patch, class) cell
        fraction; reduces to agreed/total for two annotators."""
        with self._lock:
            labels = self.latest_labels()
        if patch_filter is not None:
            labels = {
                a: {p: v for p, v in m.items() if p in patch_filter}
                for a, m in labels.items()
            }
        annotators = sorted(a for a, m in labels.items() if m)
        if len(annotators) < 2:
            return {
                "consensus": 1.0,
                "annotators": annotators,
                "pairs": 0,
                "cells": 0,
                "warning": "fewer than two annotators; consensus is degenerate",
            }
        fractions = []
        cells = 0
        for a, b in combinations(annotators, 2):
            shared = sorted(set(labels[a]) & set(labels[b]))
            agree = total = 0
            for pid in shared:
                for va, vb in zip(labels[a][pid], labels[b][pid]):
                    agree += int(va == vb)
                    total += 1
            if total:
                fractions.append(agree / total)
                cells += total
        if not fractions:
            return {
                "consensus": 1.0,
                "annotators": annotators,
                "pairs": 0,
                "cells": 0,
                "warning": "annotators share no labeled patches",
            }
        return {
            "consensus": sum(fractions) / len(fractions),
            "annotators": annotators,
            "pairs": len(fractions),
            "cells": cells,
        }


def session_from_dataset(
    session_id: str, dataset_root: str | Path, log_dir: str | Path, split: str = "train"
) -> LabelSession:
    """Session over the patches of one split of a LUAD-style dataset."""
    manifest, taxonomy = load_luad_layout(dataset_root)
    patches = [(r.patch_id, manifest.resolve(r)) for r in manifest.split(split)]
    return LabelSession(
        session_id, taxonomy, patches, Path(log_dir) / f"{session_id}.jsonl"
    )


def session_from_manifest(
    session_id: str,
    manifest_path: str | Path,
    taxonomy_path: str | Path,
    log_dir: str | Path,
    split: str | None = None,
) -> LabelSession:
    manifest = Manifest.load(manifest_path)
    taxonomy = TissueTaxonomy.load(taxonomy_path)
    records = manifest.split(split) if split else manifest.records
    patches = [(r.patch_id, manifest.resolve(r)) for r in records]
    return LabelSession(
        session_id, taxonomy, patches, Path(log_dir) / f"{session_id}.jsonl"
    )


def create_app(sessions: list[LabelSession], static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="weakseg label service")
    registry = {s.session_id: s for s in sessions}

    def get_session(sid: str) -> LabelSession:
        if sid not in registry:
            raise HTTPException(404, f"unknown session {sid!r}")
        return registry[sid]

    @app.get("/sessions")
    def list_sessions():
        return {"sessions": sorted(registry)}

    @app.get("/session/{sid}")
    def session_meta(sid: str):
        s = get_session(sid)
        return {
            "session_id": s.session_id,
            "classes": list(s.taxonomy.class_names),
            "num_patches": len(s.patches),
        }

    @app.get("/session/{sid}/next")
    def next_patch(sid: str, annotator: str = Query(...)):
        s = get_session(sid)
        nxt = s.next_unlabeled(annotator)
        done = len(s.labeled_by(annotator))
        if nxt is None:
            return {"done": True, "labeled": done, "total": len(s.patches)}
        pid, _ = nxt
        return {
            "done": False,
            "patch_id": pid,
            "image_url": f"/session/{sid}/patch/{pid}/image",
            "labeled": done,
            "total": len(s.patches),
            "classes": list(s.taxonomy.class_names),
        }

    @app.get("/session/{sid}/patch/{patch_id}/image")
    def patch_image(sid: str, patch_id: str):
        s = get_session(sid)
        path = s._by_id.get(patch_id)
        if path is None or not Path(path).exists():
            raise HTTPException(404, f"unknown patch {patch_id!r}")
        return FileResponse(path, media_type="image/png")

    @app.post("/session/{sid}/label")
    async def post_label(sid: str, request: Request):
        s = get_session(sid)
        body = await request.json()
        for key in ("patch_id", "annotator", "presence"):
            if key not in body:
                raise HTTPException(400, f"missing field {key!r}")
        patch_id = str(body["patch_id"])
        if patch_id not in s._by_id:
            raise HTTPException(404, f"unknown patch {patch_id!r}")
        presence = body["presence"]
        c = s.taxonomy.num_classes
        if (
            not isinstance(presence, list)
            or len(presence) != c
            or any(v not in (0, 1, True, False) for v in presence)
        ):
            raise HTTPException(400, f"presence must be a 0/1 vector of length {c}")
        event = LabelEvent(
            ts=time.time(),
            annotator=str(body["annotator"]),
            patch_id=patch_id,
            presence=[int(v) for v in presence],
            elapsed_ms=float(body.get("elapsed_ms", 0.0)),
        )
        try:
            s.record(event, overwrite=bool(body.get("overwrite", False)))
        except KeyError:
            raise HTTPException(
                409, f"{event.annotator!r} already labeled {patch_id!r}"
            ) from None
        return JSONResponse({"ok": True, "patch_id": patch_id}, status_code=201)

    @app.get("/session/{sid}/stats")
    def session_stats(sid: str):
        return get_session(sid).stats()

    @app.get("/consensus")
    def consensus(session: str | None = None, patches: str | None = None):
        if session is None:
            if len(registry) != 1:
                raise HTTPException(400, "session parameter required")
            session = next(iter(registry))
        s = get_session(session)
        patch_filter = (
            {p for p in patches.split(",") if p} if patches is not None else None
        )
        return s.consensus(patch_filter)

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
