"""Parse CERT-style multi-source log files into one time-ordered event stream.

Each source file is read lazily through its own cursor and the cursors are
k-way merged, so memory stays constant in the length of the stream.
"""

from __future__ import annotations

import csv
import enum
import heapq
import logging
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Iterator, Sequence

logger = logging.getLogger(__name__)

DATE_FORMAT = "%m/%d/%Y %H:%M:%S"

CATEGORY_NAMES = ("role", "project", "functional_unit", "department", "team", "supervisor")
DEFAULT_CARDINALITIES = (46, 366, 11, 23, 90, 246)
DIRECTORY_COLUMNS = (
    "employee_name", "user_id", "email", "role", "projects", "business_unit",
    "functional_unit", "department", "team", "supervisor",
)
# directory column feeding each categorical, in CATEGORY_NAMES order
_CATEGORY_COLUMNS = ("role", "projects", "functional_unit", "department", "team", "supervisor")


class Source(str, enum.Enum):
    LOGON = "logon"
    DEVICE = "device"
    FILE = "file"
    HTTP = "http"
    EMAIL = "email"


class Action(str, enum.Enum):
    LOGON = "Logon"
    LOGOFF = "Logoff"
    CONNECT = "Connect"
    DISCONNECT = "Disconnect"
    FILE_OPEN = "FileOpen"
    FILE_WRITE = "FileWrite"
    FILE_COPY = "FileCopy"
    FILE_DELETE = "FileDelete"
    HTTP_VISIT = "HttpVisit"
    HTTP_DOWNLOAD = "HttpDownload"
    HTTP_UPLOAD = "HttpUpload"
    EMAIL_SEND = "EmailSend"
    EMAIL_VIEW = "EmailView"


SOURCE_COLUMNS = {
    Source.LOGON: ("id", "date", "user", "pc", "activity"),
    Source.DEVICE: ("id", "date", "user", "pc", "file_tree", "activity"),
    Source.FILE: ("id", "date", "user", "pc", "filename", "activity",
                  "to_removable_media", "from_removable_media", "content"),
    Source.HTTP: ("id", "date", "user", "pc", "url", "activity", "content"),
    Source.EMAIL: ("id", "date", "user", "pc", "to", "cc", "bcc", "from", "activity",
                   "size", "attachments", "content"),
}

# raw activity strings (lowercased, spaces removed) -> action tag
_ACTIVITY = {
    Source.LOGON: {"logon": Action.LOGON, "logoff": Action.LOGOFF},
    Source.DEVICE: {"connect": Action.CONNECT, "disconnect": Action.DISCONNECT},
    Source.FILE: {"fileopen": Action.FILE_OPEN, "filewrite": Action.FILE_WRITE,
                  "filecopy": Action.FILE_COPY, "filedelete": Action.FILE_DELETE},
    Source.HTTP: {"wwwvisit": Action.HTTP_VISIT, "wwwdownload": Action.HTTP_DOWNLOAD,
                  "wwwupload": Action.HTTP_UPLOAD, "visit": Action.HTTP_VISIT,
                  "download": Action.HTTP_DOWNLOAD, "upload": Action.HTTP_UPLOAD},
    Source.EMAIL: {"send": Action.EMAIL_SEND, "view": Action.EMAIL_VIEW},
}


class IngestError(Exception):
    """Raised for unrecoverable input problems."""


class ParseError(IngestError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line
        self.message = message


class OrderError(IngestError):
    """A file is not sorted by timestamp."""


@dataclass
class EventRecord:
    source: Source
    timestamp: datetime
    user_id: str
    pc_id: str
    action: Action
    attributes: dict = field(default_factory=dict)
    categoricals: tuple = ()


@dataclass
class UserAttributes:
    user_id: str
    ids: tuple  # one dense id per entry of CATEGORY_NAMES

    @property
    def role(self):
        return self.ids[0]

    @property
    def project(self):
        return self.ids[1]


class Directory:
    """User attribute table with per-category dense id vocabularies.

    Ids are assigned in order of first appearance in the file. The UNKNOWN
    id of a category equals its registered cardinality.
    """

    def __init__(self, cardinalities=DEFAULT_CARDINALITIES):
        self.cardinalities = tuple(int(c) for c in cardinalities)
        if len(self.cardinalities) != len(CATEGORY_NAMES):
            raise ValueError(f"expected {len(CATEGORY_NAMES)} cardinalities")
        self.vocab = [dict() for _ in CATEGORY_NAMES]
        self.users: dict[str, UserAttributes] = {}
        self.emails: dict[str, str] = {}
        self.org_domains: set[str] = set()

    @property
    def unknown_ids(self):
        return self.cardinalities

    def _id(self, k, value):
        table = self.vocab[k]
        if value not in table:
            if len(table) >= self.cardinalities[k]:
                raise IngestError(
                    f"category {CATEGORY_NAMES[k]!r} exceeds registered cardinality "
                    f"{self.cardinalities[k]}"
                )
            table[value] = len(table)
        return table[value]

    def add(self, user_id, values, email=""):
        ids = tuple(self._id(k, v) for k, v in enumerate(values))
        self.users[user_id] = UserAttributes(user_id, ids)
        if email:
            self.emails[user_id] = email
            if "@" in email:
                self.org_domains.add(email.rsplit("@", 1)[1].lower())
        return ids

    def lookup(self, user_id):
        attrs = self.users.get(user_id)
        return None if attrs is None else attrs.ids

    @classmethod
    def load(cls, path, cardinalities=DEFAULT_CARDINALITIES):
        directory = cls(cardinalities)
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(DIRECTORY_COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise IngestError(f"{path}: directory missing columns {sorted(missing)}")
            for row in reader:
                values = []
                for col in _CATEGORY_COLUMNS:
                    v = (row[col] or "").strip()
                    if col == "projects":
                        # multi-valued: first listed project is the categorical value
                        v = v.split(";")[0].strip()
                    values.append(v)
                directory.add(row["user_id"].strip(), values, (row["email"] or "").strip())
        return directory


def parse_timestamp(text):
    return datetime.strptime(text.strip(), DATE_FORMAT)


def detect_source(path, header):
    """Pick the source for a file: by file stem first, then by most specific header match."""
    stem = Path(path).stem.lower()
    cols = set(header)
    for source in Source:
        if stem == source.value:
            missing = set(SOURCE_COLUMNS[source]) - cols
            if missing:
                raise IngestError(f"{path}: header missing columns {sorted(missing)}")
            return source
    matches = [s for s in Source if set(SOURCE_COLUMNS[s]) <= cols]
    if not matches:
        raise IngestError(f"{path}: header matches no known source: {header}")
    return max(matches, key=lambda s: len(SOURCE_COLUMNS[s]))


def _bool(text):
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no", ""):
        return False
    raise ValueError(f"bad boolean {text!r}")


def _addresses(text):
    return [a.strip().lower() for a in (text or "").split(";") if a.strip()]


def _attachment_count(text):
    t = (text or "").strip()
    if not t:
        return 0
    if t.isdigit():
        return int(t)
    return len([a for a in t.split(";") if a.strip()])


def _domain(url):
    u = url.strip()
    if "://" in u:
        u = u.split("://", 1)[1]
    return u.split("/", 1)[0].lower()


def _attributes(source, row, decoys):
    if source is Source.FILE:
        filename = row["filename"].strip()
        decoy = filename.lower() in decoys
        if row.get("decoy") not in (None, ""):
            decoy = decoy or _bool(row["decoy"])
        return {
            "filename": filename,
            "to_removable": _bool(row["to_removable_media"]),
            "from_removable": _bool(row["from_removable_media"]),
            "decoy": decoy,
        }
    if source is Source.HTTP:
        return {"url": row["url"].strip(), "domain": _domain(row["url"])}
    if source is Source.EMAIL:
        size = row["size"].strip()
        return {
            "to": _addresses(row["to"]),
            "cc": _addresses(row["cc"]),
            "bcc": _addresses(row["bcc"]),
            "from": (row["from"] or "").strip().lower(),
            "size": int(size) if size else 0,
            "attachments": _attachment_count(row["attachments"]),
        }
    return {}


def load_decoys(path):
    """Decoy file list (CSV with a ``decoy_filename`` column)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if "decoy_filename" not in (reader.fieldnames or ()):
            raise IngestError(f"{path}: missing decoy_filename column")
        return {row["decoy_filename"].strip().lower() for row in reader}


class LogStream:
    """Merged, time-ordered iterator over EventRecords from several source files.

    ``on_error`` is ``"skip"`` (count malformed lines and continue) or
    ``"abort"`` (raise ParseError). Out-of-order lines within a file always
    abort. Events of users missing from the directory get the UNKNOWN ids.
    """

    def __init__(self, paths: Sequence, directory: Directory | None = None,
                 on_error="skip", decoys: Iterable[str] = ()):
        if on_error not in ("skip", "abort"):
            raise ValueError("on_error must be 'skip' or 'abort'")
        self.paths = [Path(p) for p in paths]
        self.directory = directory if directory is not None else Directory()
        self.on_error = on_error
        self.decoys = {d.lower() for d in decoys}
        self.errors: list[ParseError] = []
        self.unknown_user_events = 0
        self.unknown_users: set[str] = set()
        self.source_counts: Counter = Counter()
        for p in self.paths:
            if not p.exists():
                raise IngestError(f"{p}: no such file")

    @property
    def error_count(self):
        return len(self.errors)

    @property
    def org_domains(self):
        return self.directory.org_domains

    def _cursor(self, path) -> Iterator[EventRecord]:
        unknown = self.directory.unknown_ids
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            source = detect_source(path, reader.fieldnames or ())
            n_cols = len(reader.fieldnames)
            actions = _ACTIVITY[source]
            last = None
            for row in reader:
                line = reader.line_num
                try:
                    if None in row or any(v is None for v in row.values()) or len(row) != n_cols:
                        raise ValueError("wrong number of fields")
                    ts = parse_timestamp(row["date"])
                    key = row["activity"].strip().lower().replace(" ", "").replace("_", "")
                    if key not in actions:
                        raise ValueError(f"unknown activity {row['activity']!r}")
                    user = row["user"].strip()
                    if not user:
                        raise ValueError("empty user")
                    attrs = _attributes(source, row, self.decoys)
                except (ValueError, KeyError, AttributeError) as exc:
                    err = ParseError(path, line, str(exc))
                    if self.on_error == "abort":
                        raise err from exc
                    logger.warning("skipping malformed line %s", err)
                    self.errors.append(err)
                    continue
                if last is not None and ts < last:
                    raise OrderError(f"{path}:{line}: timestamp {ts} precedes {last}")
                last = ts
                cats = self.directory.lookup(user)
                if cats is None:
                    cats = unknown
                    self.unknown_user_events += 1
                    if user not in self.unknown_users:
                        logger.warning("user %s not in directory, using UNKNOWN ids", user)
                        self.unknown_users.add(user)
                self.source_counts[source] += 1
                yield EventRecord(source, ts, user, row["pc"].strip(), actions[key], attrs, cats)

    def __iter__(self) -> Iterator[EventRecord]:
        cursors = [self._cursor(p) for p in self.paths]
        return heapq.merge(*cursors, key=lambda e: e.timestamp)

    def summary(self):
        """Per-source event counts of records emitted so far."""
        out = {s.value: self.source_counts.get(s, 0) for s in Source}
        out["total"] = sum(self.source_counts.values())
        out["errors"] = self.error_count
        out["unknown_user_events"] = self.unknown_user_events
        return out


def open_stream(paths, directory=None, on_error="skip", decoys=(),
                cardinalities=DEFAULT_CARDINALITIES) -> LogStream:
    """Open source files as one merged stream.

    ``directory`` may be a Directory or a path to the directory CSV; ``decoys``
    an iterable of filenames or a path to a decoy list.
    """
    if directory is not None and not isinstance(directory, Directory):
        directory = Directory.load(directory, cardinalities)
    elif directory is None:
        directory = Directory(cardinalities)
    if isinstance(decoys, (str, Path)):
        decoys = load_decoys(decoys)
    return LogStream(paths, directory, on_error=on_error, decoys=decoys)


class _WeekdayStream:
    def __init__(self, stream):
        self.stream = stream
        # keep the directory's org domains visible to downstream aggregation
        self.org_domains = getattr(stream, "org_domains", ())

    def __iter__(self):
        for e in self.stream:
            if e.timestamp.weekday() < 5:
                yield e


def weekday_filter(stream):
    """Drop events that fall on Saturday or Sunday."""
    return _WeekdayStream(stream)


def find_source_files(folder):
    """Source CSVs present in a CERT-style release folder, in Source order."""
    folder = Path(folder)
    return [folder / f"{s.value}.csv" for s in Source if (folder / f"{s.value}.csv").exists()]
