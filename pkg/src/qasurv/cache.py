"""Columnar ``.npz`` cache of a parsed dataset, so analyses skip the XML."""

from __future__ import annotations

import json
import os
from datetime import datetime, timedelta, timezone

import numpy as np

from .ingest import (
    CommentRecord,
    CommunityDataset,
    DumpError,
    PostRecord,
    PostType,
    UserRecord,
)

CACHE_VERSION = 1
_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
_ABSENT = np.iinfo(np.int64).min


def _micros(dt: datetime) -> int:
    delta = dt - _EPOCH
    return (delta.days * 86400 + delta.seconds) * 1_000_000 + delta.microseconds


def _from_micros(us) -> datetime:
    return _EPOCH + timedelta(microseconds=int(us))


def _opt(values) -> np.ndarray:
    return np.array([_ABSENT if v is None else v for v in values], dtype=np.int64)


def save_cache(dataset: CommunityDataset, path: str | os.PathLike) -> None:
    users, posts, comments = dataset.users, dataset.posts, dataset.comments
    arrays = {
        "user_id": np.array([u.user_id for u in users], dtype=np.int64),
        "user_created": np.array([_micros(u.creation_date) for u in users], dtype=np.int64),
        "user_last": np.array([_micros(u.last_access_date) for u in users], dtype=np.int64),
        "user_up": np.array([u.upvotes_cast for u in users], dtype=np.int64),
        "user_down": np.array([u.downvotes_cast for u in users], dtype=np.int64),
        "post_id": np.array([p.post_id for p in posts], dtype=np.int64),
        "post_type": np.array([p.post_type.value for p in posts], dtype=np.int8),
        "post_owner": _opt(p.owner_user_id for p in posts),
        "post_created": np.array([_micros(p.creation_date) for p in posts], dtype=np.int64),
        "post_score": np.array([p.score for p in posts], dtype=np.int64),
        "post_views": np.array([p.view_count for p in posts], dtype=np.int64),
        "post_parent": _opt(p.parent_id for p in posts),
        "comment_id": np.array([c.comment_id for c in comments], dtype=np.int64),
        "comment_post": np.array([c.post_id for c in comments], dtype=np.int64),
        "comment_owner": _opt(c.owner_user_id for c in comments),
        "comment_score": np.array([c.score for c in comments], dtype=np.int64),
        "comment_created": np.array([_micros(c.creation_date) for c in comments], dtype=np.int64),
        "observation_end": np.array([_micros(dataset.observation_end)], dtype=np.int64),
    }
    header = {"cache_version": CACHE_VERSION}
    arrays["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez_compressed(fh, **arrays)


def load_cache(path: str | os.PathLike) -> CommunityDataset:
    try:
        data = np.load(path)
    except (OSError, ValueError) as exc:
        raise DumpError(f"{path}: not a dataset cache ({exc})") from None
    with data:
        if "header" not in data:
            raise DumpError(f"{path}: not a dataset cache")
        header = json.loads(data["header"].tobytes().decode())
        if header.get("cache_version") != CACHE_VERSION:
            raise DumpError(f"{path}: unsupported cache version {header.get('cache_version')!r}")
        d = {k: data[k].tolist() for k in data.files if k != "header"}

    def opt(v):
        return None if v == _ABSENT else v

    users = tuple(
        UserRecord(uid, _from_micros(c), _from_micros(la), up, down)
        for uid, c, la, up, down in zip(
            d["user_id"], d["user_created"], d["user_last"], d["user_up"], d["user_down"]
        )
    )
    posts = tuple(
        PostRecord(pid, PostType(t), opt(o), _from_micros(c), s, v, opt(par))
        for pid, t, o, c, s, v, par in zip(
            d["post_id"], d["post_type"], d["post_owner"], d["post_created"],
            d["post_score"], d["post_views"], d["post_parent"],
        )
    )
    comments = tuple(
        CommentRecord(cid, pid, opt(o), s, _from_micros(c))
        for cid, pid, o, s, c in zip(
            d["comment_id"], d["comment_post"], d["comment_owner"],
            d["comment_score"], d["comment_created"],
        )
    )
    return CommunityDataset(users, posts, comments, _from_micros(d["observation_end"][0]))
