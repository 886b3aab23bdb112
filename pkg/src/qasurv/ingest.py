"""Streaming readers for Stack Exchange data-dump XML files.

Each dump file is a ``<rows>`` document holding one ``<row>`` element per
record, with every field stored as an attribute. The readers below walk the
document with :func:`xml.etree.ElementTree.iterparse` and clear each row once
it has been converted, so memory grows with the retained records only.
"""

from __future__ import annotations

import enum
import functools
import io
import logging
import os
import re
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Any, Callable, Iterator, Union

logger = logging.getLogger(__name__)

Source = Union[str, os.PathLike, IO[bytes]]

REQUIRED_FILES = ("Users.xml", "Posts.xml", "Comments.xml")


class DumpError(Exception):
    """Raised when a dump file or directory cannot be used."""


class DumpParseError(DumpError):
    """Malformed XML. Carries the line and column reported by the parser."""

    def __init__(self, name: str, line: int, column: int, reason: str):
        self.name = name
        self.line = line
        self.column = column
        super().__init__(f"{name}: malformed XML at line {line}, column {column}: {reason}")


class PostType(enum.Enum):
    QUESTION = 1
    ANSWER = 2


@dataclass(frozen=True, slots=True)
class UserRecord:
    user_id: int
    creation_date: datetime
    last_access_date: datetime
    upvotes_cast: int = 0
    downvotes_cast: int = 0


@dataclass(frozen=True, slots=True)
class PostRecord:
    post_id: int
    post_type: PostType
    owner_user_id: int | None
    creation_date: datetime
    score: int = 0
    view_count: int = 0
    parent_id: int | None = None


@dataclass(frozen=True, slots=True)
class CommentRecord:
    comment_id: int
    post_id: int
    owner_user_id: int | None
    score: int
    creation_date: datetime


@dataclass
class FileReport:
    """Row accounting for one file: ``rows_in == retained + dropped + skipped``.

    *Dropped* rows were filtered out on purpose (system users, wiki posts).
    *Skipped* rows were unusable (missing identity or timestamps, duplicates).
    """

    name: str
    rows_in: int = 0
    retained: int = 0
    dropped: int = 0
    skipped: int = 0
    reasons: Counter = field(default_factory=Counter)

    def drop(self, reason: str) -> None:
        self.dropped += 1
        self.reasons[reason] += 1

    def skip(self, reason: str) -> None:
        self.skipped += 1
        self.reasons[reason] += 1

    def to_dict(self) -> dict[str, Any]:
        return {
            "file": self.name,
            "rows_in": self.rows_in,
            "retained": self.retained,
            "dropped": self.dropped,
            "skipped": self.skipped,
            "reasons": dict(sorted(self.reasons.items())),
        }


@dataclass
class IngestionReport:
    files: dict[str, FileReport] = field(default_factory=dict)
    dangling_comment_posts: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "files": [r.to_dict() for r in self.files.values()],
            "dangling_comment_posts": self.dangling_comment_posts,
        }

    def to_text(self) -> str:
        lines = []
        for r in self.files.values():
            line = (
                f"{r.name}: rows_in={r.rows_in} retained={r.retained} "
                f"dropped={r.dropped} skipped={r.skipped}"
            )
            if r.reasons:
                line += " (" + ", ".join(f"{k}={v}" for k, v in sorted(r.reasons.items())) + ")"
            lines.append(line)
        lines.append(f"comments referencing unknown posts: {self.dangling_comment_posts}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class DatasetStats:
    n_questions: int
    n_users: int
    n_answers: int
    n_comments: int
    founding_year: int | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_questions": self.n_questions,
            "n_users": self.n_users,
            "n_answers": self.n_answers,
            "n_comments": self.n_comments,
            "founding_year": self.founding_year,
        }


@dataclass(frozen=True, eq=False)
class CommunityDataset:
    """Normalized records of one community. Treated as immutable after load."""

    users: tuple[UserRecord, ...]
    posts: tuple[PostRecord, ...]
    comments: tuple[CommentRecord, ...]
    observation_end: datetime
    report: IngestionReport | None = None

    @functools.cached_property
    def user_ids(self) -> tuple[int, ...]:
        return tuple(sorted(u.user_id for u in self.users))

    @functools.cached_property
    def users_by_id(self) -> dict[int, UserRecord]:
        return {u.user_id: u for u in self.users}


_FRACTION = re.compile(r"\.(\d+)")


def parse_timestamp(text: str) -> datetime:
    """Parse an ISO-8601 timestamp. Values without an offset are taken as UTC."""
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    # fromisoformat on 3.10 only takes 3 or 6 fractional digits
    m = _FRACTION.search(text)
    if m and len(m.group(1)) not in (3, 6):
        digits = (m.group(1) + "000000")[:6]
        text = text[: m.start()] + "." + digits + text[m.end():]
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        return dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def _int(attrs: dict[str, str], key: str, default: int | None = None) -> int | None:
    value = attrs.get(key)
    if value is None or value == "":
        return default
    return int(value)


def _source_name(source: Source) -> str:
    if isinstance(source, (str, os.PathLike)):
        return os.fspath(source)
    return getattr(source, "name", "<stream>")


def iter_rows(source: Source, name: str | None = None) -> Iterator[dict[str, str]]:
    """Yield the attribute dict of every ``row`` element, one at a time."""
    name = name or _source_name(source)
    try:
        context = ET.iterparse(source, events=("start", "end"))
        root = None
        for event, elem in context:
            if root is None:
                root = elem
                continue
            if event == "end" and elem.tag == "row":
                yield dict(elem.attrib)
                root.clear()
    except ET.ParseError as exc:
        line, column = exc.position
        raise DumpParseError(name, line, column, str(exc)) from None


def _parse(
    source: Source,
    name: str,
    convert: Callable[[dict[str, str], FileReport], Any],
    key: Callable[[Any], int],
) -> tuple[list, FileReport]:
    report = FileReport(name)
    records = []
    seen: set[int] = set()
    for attrs in iter_rows(source, name):
        report.rows_in += 1
        try:
            record = convert(attrs, report)
        except ValueError:
            report.skip("invalid_value")
            continue
        if record is None:
            continue
        rid = key(record)
        if rid in seen:
            report.skip("duplicate_id")
            continue
        seen.add(rid)
        records.append(record)
        report.retained += 1
    return records, report


def _convert_user(attrs: dict[str, str], report: FileReport) -> UserRecord | None:
    uid = _int(attrs, "Id")
    if uid is None:
        report.skip("missing_id")
        return None
    if uid <= 0:
        report.drop("system_user")
        return None
    created, last = attrs.get("CreationDate"), attrs.get("LastAccessDate")
    if not created or not last:
        report.skip("missing_date")
        return None
    created_dt, last_dt = parse_timestamp(created), parse_timestamp(last)
    if last_dt < created_dt:
        report.skip("access_before_creation")
        return None
    return UserRecord(
        user_id=uid,
        creation_date=created_dt,
        last_access_date=last_dt,
        upvotes_cast=_int(attrs, "UpVotes", 0),
        downvotes_cast=_int(attrs, "DownVotes", 0),
    )


def _convert_post(attrs: dict[str, str], report: FileReport) -> PostRecord | None:
    pid = _int(attrs, "Id")
    if pid is None:
        report.skip("missing_id")
        return None
    type_id = _int(attrs, "PostTypeId")
    if type_id not in (1, 2):
        report.drop("post_type")
        return None
    created = attrs.get("CreationDate")
    if not created:
        report.skip("missing_date")
        return None
    post_type = PostType(type_id)
    parent = _int(attrs, "ParentId")
    if post_type is PostType.ANSWER and parent is None:
        report.skip("answer_without_parent")
        return None
    return PostRecord(
        post_id=pid,
        post_type=post_type,
        owner_user_id=_int(attrs, "OwnerUserId"),
        creation_date=parse_timestamp(created),
        score=_int(attrs, "Score", 0),
        view_count=_int(attrs, "ViewCount", 0) if post_type is PostType.QUESTION else 0,
        parent_id=parent if post_type is PostType.ANSWER else None,
    )


def _convert_comment(attrs: dict[str, str], report: FileReport) -> CommentRecord | None:
    cid, post_id = _int(attrs, "Id"), _int(attrs, "PostId")
    if cid is None or post_id is None:
        report.skip("missing_id")
        return None
    created = attrs.get("CreationDate")
    if not created:
        report.skip("missing_date")
        return None
    return CommentRecord(
        comment_id=cid,
        post_id=post_id,
        owner_user_id=_int(attrs, "UserId"),
        score=_int(attrs, "Score", 0),
        creation_date=parse_timestamp(created),
    )


def parse_users(source: Source, name: str = "Users.xml") -> tuple[list[UserRecord], FileReport]:
    """Read ``Users.xml``. Rows with ``Id <= 0`` (the Community bot) are dropped."""
    return _parse(source, name, _convert_user, lambda r: r.user_id)


def parse_posts(source: Source, name: str = "Posts.xml") -> tuple[list[PostRecord], FileReport]:
    """Read ``Posts.xml`` keeping questions (type 1) and answers (type 2)."""
    return _parse(source, name, _convert_post, lambda r: r.post_id)


def parse_comments(
    source: Source, name: str = "Comments.xml"
) -> tuple[list[CommentRecord], FileReport]:
    return _parse(source, name, _convert_comment, lambda r: r.comment_id)


def _max_timestamp(users, posts, comments) -> datetime:
    stamps = [u.last_access_date for u in users]
    stamps += [u.creation_date for u in users]
    stamps += [p.creation_date for p in posts]
    stamps += [c.creation_date for c in comments]
    return max(stamps)


def build_dataset(
    users: list[UserRecord],
    posts: list[PostRecord],
    comments: list[CommentRecord],
    report: IngestionReport | None = None,
) -> CommunityDataset:
    """Assemble a dataset from already-parsed records."""
    if not users:
        raise DumpError("no users retained; cannot build a dataset")
    report = report or IngestionReport()
    post_ids = {p.post_id for p in posts}
    report.dangling_comment_posts = sum(1 for c in comments if c.post_id not in post_ids)
    return CommunityDataset(
        users=tuple(sorted(users, key=lambda u: u.user_id)),
        posts=tuple(sorted(posts, key=lambda p: p.post_id)),
        comments=tuple(sorted(comments, key=lambda c: c.comment_id)),
        observation_end=_max_timestamp(users, posts, comments),
        report=report,
    )


def load_dataset(directory: str | os.PathLike) -> CommunityDataset:
    """Parse ``Users.xml``, ``Posts.xml`` and ``Comments.xml`` from an extracted dump.

    ``Votes.xml`` may be present but is not read: per-user vote counts come
    from the ``UpVotes``/``DownVotes`` columns of the users table.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DumpError(f"{directory}: not a directory")
    for fname in REQUIRED_FILES:
        if not (directory / fname).is_file():
            raise DumpError(f"missing required file {fname} in {directory}")

    report = IngestionReport()
    parsed = {}
    for fname, parser in zip(REQUIRED_FILES, (parse_users, parse_posts, parse_comments)):
        with open(directory / fname, "rb") as fh:
            records, file_report = parser(fh, fname)
        parsed[fname] = records
        report.files[fname] = file_report
        logger.info("%s: retained %d of %d rows", fname, file_report.retained, file_report.rows_in)
    return build_dataset(
        parsed["Users.xml"], parsed["Posts.xml"], parsed["Comments.xml"], report
    )


def dataset_stats(dataset: CommunityDataset) -> DatasetStats:
    n_questions = sum(1 for p in dataset.posts if p.post_type is PostType.QUESTION)
    n_answers = sum(1 for p in dataset.posts if p.post_type is PostType.ANSWER)
    stamps = [u.creation_date for u in dataset.users] + [p.creation_date for p in dataset.posts]
    return DatasetStats(
        n_questions=n_questions,
        n_users=len(dataset.users),
        n_answers=n_answers,
        n_comments=len(dataset.comments),
        founding_year=min(stamps).year if stamps else None,
    )


def rows_document(rows: list[dict[str, Any]]) -> bytes:
    """Serialize attribute dicts as a dump-style ``<rows>`` document (fixtures, tests)."""
    root = ET.Element("rows")
    for attrs in rows:
        ET.SubElement(root, "row", {k: str(v) for k, v in attrs.items() if v is not None})
    buf = io.BytesIO()
    ET.ElementTree(root).write(buf, encoding="utf-8", xml_declaration=True)
    return buf.getvalue()
