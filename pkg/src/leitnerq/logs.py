"""Review-log ingestion and per user-item history reconstruction."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable

HEADER = ["user_id", "item_id", "timestamp", "grade"]
SECONDS_PER_DAY = 86400.0


class LogFormatError(ValueError):
    pass


class Dialect(str, Enum):
    MNEMOSYNE = "mnemosyne"  # grades 0-5, recall iff grade >= 2
    SELF_ASSESSMENT = "self_assessment"  # grades 1-4, pass iff grade >= 3

    @classmethod
    def parse(cls, value: "Dialect | str") -> "Dialect":
        if isinstance(value, Dialect):
            return value
        aliases = {"self": cls.SELF_ASSESSMENT, "mturk": cls.SELF_ASSESSMENT}
        try:
            return aliases.get(value) or cls(value)
        except ValueError:
            raise LogFormatError(f"unknown dialect {value!r}") from None


class TimeUnit(str, Enum):
    DAYS = "days"
    SECONDS = "seconds"

    @property
    def seconds(self) -> float:
        return SECONDS_PER_DAY if self is TimeUnit.DAYS else 1.0


_GRADE_RANGE = {Dialect.MNEMOSYNE: (0, 5), Dialect.SELF_ASSESSMENT: (1, 4)}
_PASS_MARK = {Dialect.MNEMOSYNE: 2, Dialect.SELF_ASSESSMENT: 3}


def binarize_grade(grade: int, dialect: Dialect | str) -> bool:
    dialect = Dialect.parse(dialect)
    lo, hi = _GRADE_RANGE[dialect]
    if not lo <= grade <= hi:
        raise LogFormatError(f"grade out of range: {grade} not in [{lo}, {hi}] for {dialect.value}")
    return grade >= _PASS_MARK[dialect]


@dataclass(frozen=True)
class ReviewLog:
    user_id: str
    item_id: str
    timestamp: float  # seconds since epoch
    grade: int
    outcome: bool


@dataclass(frozen=True)
class LogSet:
    logs: tuple[ReviewLog, ...]
    dialect: Dialect
    time_unit: TimeUnit

    def __len__(self):
        return len(self.logs)

    @property
    def recall_rate(self) -> float:
        if not self.logs:
            return math.nan
        return sum(r.outcome for r in self.logs) / len(self.logs)


@dataclass(frozen=True)
class Interaction:
    timestamp: float
    outcome: bool
    d: float | None  # delay since the previous review of this pair, in the LogSet unit
    n: int  # reviews so far, this one included
    q: int  # Leitner deck at review time, before this outcome is applied


@dataclass(frozen=True)
class InteractionHistory:
    user_id: str
    item_id: str
    interactions: tuple[Interaction, ...] = field(default_factory=tuple)

    def __len__(self):
        return len(self.interactions)

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "item_id": self.item_id,
            "interactions": [
                {"timestamp": x.timestamp, "outcome": x.outcome, "d": x.d, "n": x.n, "q": x.q}
                for x in self.interactions
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InteractionHistory":
        inter = tuple(
            Interaction(float(x["timestamp"]), bool(x["outcome"]),
                        None if x["d"] is None else float(x["d"]), int(x["n"]), int(x["q"]))
            for x in d["interactions"]
        )
        return cls(str(d["user_id"]), str(d["item_id"]), inter)


def parse_logs(stream: IO[bytes] | IO[str] | bytes | str, dialect: Dialect | str = Dialect.MNEMOSYNE,
               time_unit: TimeUnit | str = TimeUnit.DAYS) -> LogSet:
    """Read a ``user_id,item_id,timestamp,grade`` CSV into a LogSet.

    Accepts a binary or text stream, or the raw bytes/str content.
    Row order is preserved. Repeated (user, item, timestamp) triples are
    rejected since the history of a pair would be ambiguous.
    """
    dialect = Dialect.parse(dialect)
    time_unit = TimeUnit(time_unit)
    if isinstance(stream, bytes):
        text = stream.decode("utf-8")
    elif isinstance(stream, str):
        text = stream
    else:
        raw = stream.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    if text.startswith("\ufeff"):
        text = text[1:]

    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise LogFormatError("line 1: missing header") from None
    if [h.strip() for h in header] != HEADER:
        raise LogFormatError(f"line 1: expected header {','.join(HEADER)}, got {','.join(header)}")

    logs = []
    seen = set()
    for row in reader:
        lineno = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise LogFormatError(f"line {lineno}: expected 4 fields, got {len(row)}")
        user, item, ts_s, grade_s = (c.strip() for c in row)
        if not user or not item:
            raise LogFormatError(f"line {lineno}: empty user_id or item_id")
        try:
            ts = float(ts_s)
        except ValueError:
            raise LogFormatError(f"line {lineno}: bad timestamp {ts_s!r}") from None
        if not math.isfinite(ts) or ts < 0:
            raise LogFormatError(f"line {lineno}: timestamp must be finite and non-negative")
        try:
            grade = int(grade_s)
        except ValueError:
            raise LogFormatError(f"line {lineno}: bad grade {grade_s!r}") from None
        try:
            outcome = binarize_grade(grade, dialect)
        except LogFormatError as e:
            raise LogFormatError(f"line {lineno}: {e}") from None
        key = (user, item, ts)
        if key in seen:
            raise LogFormatError(f"line {lineno}: duplicate review of ({user}, {item}) at {ts_s}")
        seen.add(key)
        logs.append(ReviewLog(user, item, ts, grade, outcome))
    return LogSet(tuple(logs), dialect, time_unit)


def write_logs(logs: Iterable[ReviewLog], out: IO[str]) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(HEADER)
    for r in logs:
        w.writerow([r.user_id, r.item_id, repr(r.timestamp), r.grade])


def filter_min_interactions(logset: LogSet, k: int) -> LogSet:
    """Drop users and items with fewer than k logs, repeating until nothing
    else falls below the threshold."""
    if k < 0:
        raise ValueError("k must be non-negative")
    logs = list(logset.logs)
    while True:
        users = Counter(r.user_id for r in logs)
        items = Counter(r.item_id for r in logs)
        kept = [r for r in logs if users[r.user_id] >= k and items[r.item_id] >= k]
        if len(kept) == len(logs):
            break
        logs = kept
    return LogSet(tuple(logs), logset.dialect, logset.time_unit)


def replay(outcomes: Iterable[bool]) -> list[int]:
    """Deck position seen at each review when items start in deck 1,
    move up on recall and down (floored at 1) on a lapse."""
    q, decks = 1, []
    for ok in outcomes:
        decks.append(q)
        q = q + 1 if ok else max(q - 1, 1)
    return decks


def build_histories(logset: LogSet) -> list[InteractionHistory]:
    """Group by (user, item), order by time and annotate d, n and q.

    Histories come back sorted by (user_id, item_id) so the output does not
    depend on file order.
    """
    groups: dict[tuple[str, str], list[ReviewLog]] = defaultdict(list)
    for r in logset.logs:
        groups[(r.user_id, r.item_id)].append(r)

    unit = logset.time_unit.seconds
    out = []
    for (user, item) in sorted(groups):
        rows = sorted(groups[(user, item)], key=lambda r: r.timestamp)
        for a, b in zip(rows, rows[1:]):
            if a.timestamp == b.timestamp:
                raise LogFormatError(f"duplicate timestamp {a.timestamp} for ({user}, {item})")
        decks = replay(r.outcome for r in rows)
        inter = []
        for i, r in enumerate(rows):
            d = None if i == 0 else (r.timestamp - rows[i - 1].timestamp) / unit
            inter.append(Interaction(r.timestamp, r.outcome, d, i + 1, decks[i]))
        out.append(InteractionHistory(user, item, tuple(inter)))
    return out


def histories_to_json(histories: Iterable[InteractionHistory], time_unit: TimeUnit | str | None = None) -> str:
    payload = {"histories": [h.to_dict() for h in histories]}
    if time_unit is not None:
        payload["time_unit"] = TimeUnit(time_unit).value
    return json.dumps(payload, sort_keys=True)


def histories_from_json(text: str) -> list[InteractionHistory]:
    data = json.loads(text)
    if isinstance(data, dict):
        data = data["histories"]
    return [InteractionHistory.from_dict(h) for h in data]


def summarize(logset: LogSet) -> dict:
    return {
        "users": len({r.user_id for r in logset.logs}),
        "items": len({r.item_id for r in logset.logs}),
        "interactions": len(logset.logs),
        "recall_rate": logset.recall_rate,
    }
