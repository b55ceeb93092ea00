"""JSON-lines dataset files shared by every stage.

Sequence files hold one record per line::

    {"label": str, "split": "train"|"val"|"test", "process_id": int,
     "offset": int, "frames": [[96 floats] x T]}

Raw recording files use ``raw_rate_hz`` and ``stop_index`` in place of
``split`` and ``offset``. Floats are written with ``repr`` precision so a
round trip is exact.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

from .errors import CorruptFile
from .signal import PushRecording, TactileSequence


def sequence_to_record(s: TactileSequence) -> dict:
    rec = {
        "label": s.label,
        "split": s.split,
        "process_id": s.process_id,
        "offset": s.offset,
        "frames": s.frames.tolist(),
    }
    if s.target is not None:
        rec["target"] = s.target.tolist()
    return rec


def record_to_sequence(rec: dict, rate_hz: float = 25.0) -> TactileSequence:
    return TactileSequence(
        frames=rec["frames"],
        label=rec["label"],
        process_id=int(rec["process_id"]),
        offset=int(rec["offset"]),
        rate_hz=rate_hz,
        split=rec.get("split", "train"),
        target=rec.get("target"),
    )


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as f:
        for r in records:
            f.write(json.dumps(r))
            f.write("\n")


def read_jsonl(path: str | Path) -> list[dict]:
    out = []
    with Path(path).open() as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise CorruptFile(f"{path}:{lineno}: {exc}") from exc
    return out


def write_sequences(path: str | Path, seqs: Iterable[TactileSequence]) -> None:
    write_jsonl(path, (sequence_to_record(s) for s in seqs))


def read_sequences(path: str | Path) -> list[TactileSequence]:
    try:
        return [record_to_sequence(r) for r in read_jsonl(path)]
    except (KeyError, ValueError, TypeError) as exc:
        raise CorruptFile(f"{path}: malformed sequence record: {exc}") from exc


def write_recordings(path: str | Path, recs: Iterable[PushRecording]) -> None:
    write_jsonl(
        path,
        (
            {
                "label": r.label,
                "process_id": r.process_id,
                "raw_rate_hz": r.raw_rate_hz,
                "stop_index": r.stop_index,
                "frames": r.frames.tolist(),
            }
            for r in recs
        ),
    )


def read_recordings(path: str | Path) -> list[PushRecording]:
    try:
        return [
            PushRecording(
                frames=r["frames"],
                stop_index=int(r["stop_index"]),
                label=r["label"],
                process_id=int(r["process_id"]),
                raw_rate_hz=float(r["raw_rate_hz"]),
            )
            for r in read_jsonl(path)
        ]
    except (KeyError, ValueError, TypeError) as exc:
        raise CorruptFile(f"{path}: malformed recording: {exc}") from exc
