"""Serve a selected pair plan to human subjects and record judgments.

Each session presents the plan's pairs in a seeded random order with
seeded left/right flips.  Judgments append to a per-session log file and
are fsynced before acknowledgement, so a crash never loses an
acknowledged judgment; restart replays the logs.  The wire protocol
(documented in docs/protocol.md, versioned under /api/v1) carries JSON
bodies; image bytes are served statically from the dataset directory.
"""

from __future__ import annotations

import hashlib
import json
import mimetypes
import os
import re
import threading
import time
import uuid
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from . import rng
from .datasets import Dataset
from .errors import ConflictError, FormatError, ValidationError
from .selection import SelectionPlan

PROTOCOL_VERSION = "v1"
API_PREFIX = f"/api/{PROTOCOL_VERSION}"
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".webp")


@dataclass(frozen=True)
class PlanPair:
    reference_id: str
    i_id: str
    j_id: str
    reference_image: str


class _Session:
    __slots__ = (
        "session_id",
        "subject_id",
        "seed",
        "order",
        "flips",
        "cursor",
        "judgments",
        "lock",
    )

    def __init__(self, session_id, subject_id, seed, order, flips):
        self.session_id = session_id
        self.subject_id = subject_id
        self.seed = seed
        self.order = order
        self.flips = flips
        self.cursor = 0
        self.judgments = []  # (pair_index, chosen_id, left_id)
        self.lock = threading.Lock()


def _fsync_dir(path: Path) -> None:
    fd = os.open(path, os.O_RDONLY)
    try:
        os.fsync(fd)
    finally:
        os.close(fd)


class JudgmentService:
    """Plan presentation, durable judgment storage, and PCM export."""

    def __init__(self, dataset: Dataset, plan: SelectionPlan, store_dir):
        self.dataset = dataset
        self.plan = plan
        self.pairs = []
        for ref_id, i, j in plan.selected:
            ref = dataset.reference(ref_id)
            self.pairs.append(
                PlanPair(
                    reference_id=ref_id,
                    i_id=ref.image_ids[i],
                    j_id=ref.image_ids[j],
                    reference_image=ref.reference_image,
                )
            )
        digest = hashlib.sha256()
        digest.update(f"{plan.criterion}|{plan.budget_fraction!r}".encode())
        for pair in self.pairs:
            digest.update(f"|{pair.reference_id},{pair.i_id},{pair.j_id}".encode())
        self.plan_fingerprint = digest.hexdigest()[:16]
        self.store_dir = Path(store_dir)
        self.store_dir.mkdir(parents=True, exist_ok=True)
        self._sessions = {}
        self._lock = threading.Lock()
        self._load_existing()

    # -- persistence ------------------------------------------------------

    def _meta_path(self, session_id: str) -> Path:
        return self.store_dir / f"{session_id}.json"

    def _log_path(self, session_id: str) -> Path:
        return self.store_dir / f"{session_id}.log"

    def _load_existing(self) -> None:
        for meta_path in sorted(self.store_dir.glob("*.json")):
            meta = json.loads(meta_path.read_text())
            if meta.get("plan") != self.plan_fingerprint:
                raise ValidationError(
                    f"session {meta.get('session_id')!r} in {self.store_dir} was "
                    f"created under a different plan ({meta.get('plan')!r}, "
                    f"expected {self.plan_fingerprint!r})"
                )
            session = _Session(
                session_id=meta["session_id"],
                subject_id=meta["subject_id"],
                seed=meta["seed"],
                order=tuple(meta["order"]),
                flips=tuple(bool(f) for f in meta["flips"]),
            )
            self._replay_log(session)
            self._sessions[session.session_id] = session

    def _replay_log(self, session: _Session) -> None:
        log_path = self._log_path(session.session_id)
        if not log_path.exists():
            return
        data = log_path.read_bytes()
        offset = 0
        seq = 0
        while offset < len(data):
            end = data.find(b"\n", offset)
            if end == -1:
                # Partial trailing line: the crash happened before fsync
                # completed, so this judgment was never acknowledged.
                break
            line = data[offset:end]
            try:
                record = json.loads(line)
                if record["seq"] != seq:
                    raise ValueError(f"expected seq {seq}, got {record['seq']}")
                pair_index = session.order[seq]
                pair = self.pairs[pair_index]
                if record["ref"] != pair.reference_id or {record["i"], record["j"]} != {
                    pair.i_id,
                    pair.j_id,
                }:
                    raise ValueError("judgment does not match the plan pair")
                chosen = record["chosen"]
                if chosen not in (pair.i_id, pair.j_id):
                    raise ValueError(f"chosen {chosen!r} is not part of the pair")
            except (ValueError, KeyError, json.JSONDecodeError) as exc:
                raise FormatError(
                    f"corrupt judgment log at byte offset {offset}: {exc}",
                    path=log_path,
                ) from exc
            session.judgments.append((pair_index, chosen, record.get("left")))
            seq += 1
            offset = end + 1
        session.cursor = seq

    def _persist_meta(self, session: _Session) -> None:
        meta = {
            "session_id": session.session_id,
            "subject_id": session.subject_id,
            "plan": self.plan_fingerprint,
            "seed": session.seed,
            "order": list(session.order),
            "flips": [int(f) for f in session.flips],
            "created": time.time(),
        }
        path = self._meta_path(session.session_id)
        tmp = path.with_suffix(".json.tmp")
        with tmp.open("w") as fh:
            json.dump(meta, fh)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
        _fsync_dir(self.store_dir)

    def _append_judgment(self, session: _Session, record: dict) -> None:
        with self._log_path(session.session_id).open("a") as fh:
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    # -- session operations ------------------------------------------------

    def create_session(self, subject_id: str, seed: int | None = None, session_id: str | None = None) -> dict:
        if not subject_id:
            raise ValidationError("subject_id must be non-empty")
        if seed is None:
            seed = int.from_bytes(os.urandom(4), "little")
        if session_id is None:
            session_id = uuid.uuid4().hex[:12]
        if not re.fullmatch(r"[A-Za-z0-9_-]+", session_id):
            raise ValidationError(f"invalid session id {session_id!r}")
        n = len(self.pairs)
        order = tuple(int(k) for k in rng.stream(seed, "order").permutation(n))
        flips = tuple(bool(b) for b in rng.stream(seed, "flip").integers(0, 2, n))
        with self._lock:
            if session_id in self._sessions:
                raise ValidationError(f"session {session_id!r} already exists")
            session = _Session(session_id, subject_id, seed, order, flips)
            self._persist_meta(session)
            self._sessions[session_id] = session
        return self.progress(session_id)

    def _get(self, session_id: str) -> _Session:
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise KeyError(session_id)
        return session

    def progress(self, session_id: str) -> dict:
        session = self._get(session_id)
        return {
            "session_id": session.session_id,
            "subject_id": session.subject_id,
            "cursor": session.cursor,
            "total": len(self.pairs),
            "completed": session.cursor >= len(self.pairs),
        }

    def next_pair(self, session_id: str) -> dict:
        session = self._get(session_id)
        with session.lock:
            cursor = session.cursor
            if cursor >= len(self.pairs):
                return {"completed": True, "cursor": cursor, "total": len(self.pairs)}
            pair_index = session.order[cursor]
            pair = self.pairs[pair_index]
            flip = session.flips[pair_index]
            left, right = (pair.j_id, pair.i_id) if flip else (pair.i_id, pair.j_id)
            return {
                "completed": False,
                "cursor": cursor,
                "total": len(self.pairs),
                "reference_id": pair.reference_id,
                "reference_image": pair.reference_image,
                "left": left,
                "right": right,
            }

    def record_judgment(
        self, session_id: str, reference_id: str, images, chosen: str, cursor: int
    ) -> dict:
        session = self._get(session_id)
        with session.lock:
            if cursor != session.cursor:
                raise ConflictError(
                    f"judgment for cursor {cursor} but session is at {session.cursor}"
                )
            if session.cursor >= len(self.pairs):
                raise ConflictError("session is already complete")
            pair_index = session.order[session.cursor]
            pair = self.pairs[pair_index]
            if reference_id != pair.reference_id or set(images) != {pair.i_id, pair.j_id}:
                raise ConflictError(
                    f"judgment names pair {images!r} of {reference_id!r}, expected "
                    f"({pair.i_id}, {pair.j_id}) of {pair.reference_id!r}"
                )
            if chosen not in (pair.i_id, pair.j_id):
                raise ValidationError(
                    f"chosen image {chosen!r} is not part of the presented pair"
                )
            left = pair.j_id if session.flips[pair_index] else pair.i_id
            record = {
                "seq": session.cursor,
                "ref": pair.reference_id,
                "i": pair.i_id,
                "j": pair.j_id,
                "chosen": chosen,
                "left": left,
                "ts": time.time(),
            }
            self._append_judgment(session, record)
            session.judgments.append((pair_index, chosen, left))
            session.cursor += 1
            return {
                "cursor": session.cursor,
                "total": len(self.pairs),
                "completed": session.cursor >= len(self.pairs),
            }

    # -- export -------------------------------------------------------------

    def export_rows(self):
        """PCM fragment rows (ref_id, i_id, j_id, p, w) for judged plan pairs."""
        wins = {}
        totals = {}
        with self._lock:
            sessions = list(self._sessions.values())
        for session in sessions:
            with session.lock:
                judgments = list(session.judgments)
            for pair_index, chosen, _left in judgments:
                pair = self.pairs[pair_index]
                key = (pair.reference_id, pair.i_id, pair.j_id)
                totals[key] = totals.get(key, 0) + 1
                if chosen == pair.i_id:
                    wins[key] = wins.get(key, 0) + 1
        rows = []
        for pair in self.pairs:
            key = (pair.reference_id, pair.i_id, pair.j_id)
            total = totals.get(key, 0)
            if total == 0:
                continue
            rows.append((*key, wins.get(key, 0) / total, float(total)))
        return rows

    def export_csv(self) -> str:
        lines = ["ref_id,i_id,j_id,p,w"]
        for ref_id, i_id, j_id, p, w in self.export_rows():
            lines.append(f"{ref_id},{i_id},{j_id},{p!r},{w!r}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# HTTP layer


def _find_image(dataset_root: Path, image_id: str) -> Path | None:
    if not re.fullmatch(r"[A-Za-z0-9_-]+", image_id):
        return None
    for folder in (dataset_root / "images", dataset_root):
        for ext in IMAGE_EXTENSIONS:
            candidate = folder / f"{image_id}{ext}"
            if candidate.exists():
                return candidate
    return None


def make_handler(service: JudgmentService, dataset_root: Path, ui_dir: Path | None):
    session_next = re.compile(rf"^{API_PREFIX}/sessions/([A-Za-z0-9_-]+)/next$")
    session_progress = re.compile(rf"^{API_PREFIX}/sessions/([A-Za-z0-9_-]+)/progress$")
    session_judgments = re.compile(rf"^{API_PREFIX}/sessions/([A-Za-z0-9_-]+)/judgments$")

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, *args):  # quiet by default
            pass

        def _send_json(self, status: int, payload: dict) -> None:
            body = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _send_error_json(self, status: int, message: str, **extra) -> None:
            self._send_json(status, {"error": message, **extra})

        def _read_json(self) -> dict:
            length = int(self.headers.get("Content-Length", 0))
            raw = self.rfile.read(length) if length else b"{}"
            try:
                doc = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"invalid JSON body: {exc.msg}") from exc
            if not isinstance(doc, dict):
                raise ValidationError("JSON body must be an object")
            return doc

        def _send_file(self, path: Path) -> None:
            data = path.read_bytes()
            ctype = mimetypes.guess_type(str(path))[0] or "application/octet-stream"
            self.send_response(200)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self):
            try:
                if self.path == f"{API_PREFIX}/plan":
                    self._send_json(
                        200,
                        {
                            "total": len(service.pairs),
                            "criterion": service.plan.criterion,
                            "budget": service.plan.budget_fraction,
                            "protocol": PROTOCOL_VERSION,
                        },
                    )
                    return
                if self.path == f"{API_PREFIX}/export":
                    body = service.export_csv().encode()
                    self.send_response(200)
                    self.send_header("Content-Type", "text/csv")
                    self.send_header("Content-Length", str(len(body)))
                    self.end_headers()
                    self.wfile.write(body)
                    return
                m = session_next.match(self.path)
                if m:
                    self._send_json(200, service.next_pair(m.group(1)))
                    return
                m = session_progress.match(self.path)
                if m:
                    self._send_json(200, service.progress(m.group(1)))
                    return
                if self.path.startswith("/images/"):
                    image_id = self.path[len("/images/") :]
                    found = _find_image(dataset_root, image_id)
                    if found is None:
                        self._send_error_json(404, f"no image {image_id!r}")
                    else:
                        self._send_file(found)
                    return
                if ui_dir is not None:
                    rel = "index.html" if self.path in ("/", "") else self.path.lstrip("/")
                    candidate = (ui_dir / rel).resolve()
                    if str(candidate).startswith(str(ui_dir.resolve())) and candidate.is_file():
                        self._send_file(candidate)
                        return
                self._send_error_json(404, f"no route for {self.path!r}")
            except KeyError as exc:
                self._send_error_json(404, f"unknown session {exc.args[0]!r}")
            except ValidationError as exc:
                self._send_error_json(400, str(exc))

        def do_POST(self):
            try:
                if self.path == f"{API_PREFIX}/sessions":
                    doc = self._read_json()
                    result = service.create_session(
                        subject_id=doc.get("subject_id", ""),
                        seed=doc.get("seed"),
                        session_id=doc.get("session_id"),
                    )
                    self._send_json(201, result)
                    return
                m = session_judgments.match(self.path)
                if m:
                    doc = self._read_json()
                    for field in ("reference_id", "images", "chosen", "cursor"):
                        if field not in doc:
                            raise ValidationError(f"missing field {field!r}")
                    result = service.record_judgment(
                        m.group(1),
                        reference_id=doc["reference_id"],
                        images=doc["images"],
                        chosen=doc["chosen"],
                        cursor=doc["cursor"],
                    )
                    self._send_json(200, result)
                    return
                self._send_error_json(404, f"no route for {self.path!r}")
            except KeyError as exc:
                self._send_error_json(404, f"unknown session {exc.args[0]!r}")
            except ConflictError as exc:
                sid = session_judgments.match(self.path)
                extra = {}
                if sid:
                    try:
                        extra["cursor"] = service.progress(sid.group(1))["cursor"]
                    except KeyError:
                        pass
                self._send_error_json(409, str(exc), **extra)
            except ValidationError as exc:
                self._send_error_json(400, str(exc))

    return Handler


def make_server(
    service: JudgmentService,
    port: int,
    host: str = "127.0.0.1",
    ui_dir=None,
) -> ThreadingHTTPServer:
    dataset_root = service.dataset.root or Path(".")
    handler = make_handler(service, Path(dataset_root), Path(ui_dir) if ui_dir else None)
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    return server
