from __future__ import annotations

from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
import pytest

from qasurv import rsf
from qasurv.ingest import rows_document

END = datetime(2021, 5, 30, 12, 0, 0)


def iso(dt: datetime) -> str:
    return dt.strftime("%Y-%m-%dT%H:%M:%S.%f")[:-3]


def write_dump(directory: Path, users, posts, comments, votes=None) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "Users.xml").write_bytes(rows_document(users))
    (directory / "Posts.xml").write_bytes(rows_document(posts))
    (directory / "Comments.xml").write_bytes(rows_document(comments))
    if votes is not None:
        (directory / "Votes.xml").write_bytes(rows_document(votes))
    return directory


def synthetic_community(n_users: int = 400, seed: int = 0):
    """Rows for a small community where contributors tend to stay active.

    Returns ``(users, posts, comments)`` attribute dicts. Users that post,
    comment or vote keep visiting; lurkers tend to vanish early.
    """
    rng = np.random.default_rng(seed)
    start = END - timedelta(days=30.44 * 108)
    users, posts, comments = [], [], []
    users.append({"Id": -1, "CreationDate": iso(start), "LastAccessDate": iso(start),
                  "UpVotes": 500, "DownVotes": 900})
    post_id = 1
    comment_id = 1
    question_ids = []
    for uid in range(1, n_users + 1):
        created = start + timedelta(days=float(rng.uniform(0, 30.44 * 96)))
        activity = rng.random()
        active = activity > 0.6
        n_q = rng.poisson(2.0) if active else 0
        n_a = rng.poisson(1.5) if active and rng.random() < 0.6 else 0
        n_c = rng.poisson(3.0) if active and rng.random() < 0.7 else 0
        ups = int(rng.poisson(5)) if active or rng.random() < 0.15 else 0
        downs = int(rng.poisson(1)) if active and rng.random() < 0.4 else 0
        horizon = (END - created).days
        stay = rng.uniform(0.5, 1.0) if active else rng.uniform(0.0, 0.35)
        last = created + timedelta(days=float(horizon * stay))
        users.append({"Id": uid, "CreationDate": iso(created), "LastAccessDate": iso(last),
                      "UpVotes": ups, "DownVotes": downs})
        for _ in range(n_q):
            when = created + timedelta(days=float(rng.uniform(0, max(1, (last - created).days))))
            posts.append({"Id": post_id, "PostTypeId": 1, "OwnerUserId": uid,
                          "CreationDate": iso(when), "Score": int(rng.integers(-2, 10)),
                          "ViewCount": int(rng.integers(5, 500))})
            question_ids.append(post_id)
            post_id += 1
        for _ in range(n_a):
            if not question_ids:
                break
            parent = int(rng.choice(question_ids))
            posts.append({"Id": post_id, "PostTypeId": 2, "OwnerUserId": uid, "ParentId": parent,
                          "CreationDate": iso(last), "Score": int(rng.integers(-1, 8))})
            post_id += 1
        for _ in range(n_c):
            if post_id == 1:
                break
            comments.append({"Id": comment_id, "PostId": int(rng.integers(1, post_id)),
                             "UserId": uid, "Score": int(rng.integers(0, 4)),
                             "CreationDate": iso(last)})
            comment_id += 1
    posts.append({"Id": post_id, "PostTypeId": 5, "CreationDate": iso(start)})  # tag wiki
    return users, posts, comments


@pytest.fixture(scope="session")
def community_dir(tmp_path_factory) -> Path:
    users, posts, comments = synthetic_community()
    return write_dump(tmp_path_factory.mktemp("dump") / "community", users, posts, comments)


# ------------------------------------------------------------------ leaf audit
#
# Every tree grown anywhere in the suite is re-audited independently: its in-bag
# samples (with bootstrap multiplicity) are routed down the tree and the events
# landing in each leaf are counted from scratch.

AUDIT = {"trees": 0, "leaves": 0, "violations": []}
_grow_tree = rsf.grow_tree


def _audited_grow_tree(X, events, durations, in_bag, params, rng, *args, **kwargs):
    tree = _grow_tree(X, events, durations, in_bag, params, rng, *args, **kwargs)
    X = np.asarray(X, dtype=float)
    events = np.asarray(events)
    in_bag = np.asarray(in_bag)
    leaves = tree.apply(X[in_bag])
    deaths = np.bincount(leaves, weights=events[in_bag], minlength=tree.n_leaves)
    AUDIT["trees"] += 1
    AUDIT["leaves"] += tree.n_leaves
    bad = np.flatnonzero(deaths < params.min_leaf_deaths)
    if bad.size:
        AUDIT["violations"].append((params, deaths[bad].tolist()))
    return tree


rsf.grow_tree = _audited_grow_tree


def pytest_collection_modifyitems(items):
    # acceptance runs last so its leaf-audit criterion sees every tree in the suite
    items.sort(key=lambda item: item.module.__name__ == "test_acceptance")


@pytest.fixture(autouse=True)
def _leaf_audit():
    before = len(AUDIT["violations"])
    yield
    assert len(AUDIT["violations"]) == before, AUDIT["violations"][before:]


# ------------------------------------------------------------ acceptance lines

ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record(criterion: str, ok: bool, detail: str) -> bool:
    """Note the outcome of an acceptance criterion for the summary."""
    ACCEPTANCE[criterion] = (bool(ok), detail)
    print(f"{criterion}: {'PASS' if ok else 'FAIL'} ({detail})")
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for name in sorted(ACCEPTANCE, key=lambda k: int(k.split()[1])):
            ok, detail = ACCEPTANCE[name]
            terminalreporter.write_line(f"{name}: {'PASS' if ok else 'FAIL'}  {detail}")
    terminalreporter.write_line(
        f"leaf audit: {AUDIT['trees']} trees, {AUDIT['leaves']} leaves, "
        f"{len(AUDIT['violations'])} below min_leaf_deaths"
    )
