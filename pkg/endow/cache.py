"""SQLite cache for critical-b3 bisections."""

import hashlib
import json
import logging
import sqlite3
import time
from collections.abc import Iterator
from contextlib import closing, contextmanager
from pathlib import Path
from typing import Any

from endow.config import settings
from endow.solver.ode import ToleranceOptions, find_b3_crit

logger = logging.getLogger(__name__)

_SCHEMA = (
    "CREATE TABLE IF NOT EXISTS results ("
    " key TEXT PRIMARY KEY, payload TEXT NOT NULL,"
    " stored_at REAL NOT NULL, expires_at REAL NOT NULL)"
)


class Cache:
    """JSON payloads keyed by a hash of the call arguments, each with an expiry time."""

    def __init__(self, cache_dir: str | Path | None = None):
        root = Path(cache_dir or settings.cache_dir)
        root.mkdir(parents=True, exist_ok=True)
        self.db_path = root / "b3crit.sqlite"
        with self._connect() as conn:
            conn.execute(_SCHEMA)

    @contextmanager
    def _connect(self) -> Iterator[sqlite3.Connection]:
        # sqlite3's own context manager commits but never closes
        with closing(sqlite3.connect(self.db_path)) as conn, conn:
            yield conn

    @staticmethod
    def make_key(kind: str, **args: float) -> str:
        # repr keeps every bit of a float, so nearby tolerances never collide
        text = kind + "|" + ",".join(f"{k}={v!r}" for k, v in sorted(args.items()))
        return hashlib.sha256(text.encode()).hexdigest()

    def get(self, key: str) -> dict[str, Any] | None:
        """Stored payload, or None when missing or expired."""
        now = time.time()
        with self._connect() as conn:
            row = conn.execute(
                "SELECT payload, expires_at FROM results WHERE key = ?", (key,)
            ).fetchone()
            if row is None:
                return None
            if now > row[1]:
                conn.execute("DELETE FROM results WHERE key = ?", (key,))
                return None
        payload: dict[str, Any] = json.loads(row[0])
        return payload

    def set(self, key: str, value: dict[str, Any], ttl: float | None = None) -> None:
        now = time.time()
        life = settings.cache_ttl if ttl is None else ttl
        with self._connect() as conn:
            conn.execute(
                "INSERT OR REPLACE INTO results VALUES (?, ?, ?, ?)",
                (key, json.dumps(value), now, now + life),
            )

    def clear(self) -> None:
        with self._connect() as conn:
            conn.execute("DELETE FROM results")

    def cleanup_expired(self) -> int:
        """Drop expired rows; returns how many went."""
        with self._connect() as conn:
            return conn.execute(
                "DELETE FROM results WHERE expires_at < ?", (time.time(),)
            ).rowcount


_cache: Cache | None = None


def get_cache() -> Cache:
    global _cache
    if _cache is None:
        _cache = Cache()
    return _cache


def cached_b3_crit(b1: float, b2: float, R: float, tol: float,
                   cache: Cache | None = None) -> float:
    """find_b3_crit memoised on (b1, b2, R, tol); usable as a crit_lookup hook."""
    opts = ToleranceOptions.from_settings()
    if not settings.cache_enabled and cache is None:
        return find_b3_crit(b1, b2, R, tol=tol, opts=opts)
    store = cache or get_cache()
    key = Cache.make_key("b3_crit", b1=b1, b2=b2, R=R, tol=tol, rtol=opts.rtol)
    hit = store.get(key)
    if hit is not None:
        logger.debug("b3_crit cache hit (b1=%g, b2=%g, R=%g)", b1, b2, R)
        return float(hit["b3_crit"])
    crit = find_b3_crit(b1, b2, R, tol=tol, opts=opts)
    logger.info("b3_crit(b1=%g, b2=%g, R=%g) = %.10g cached", b1, b2, R, crit)
    store.set(key, {"b3_crit": crit})
    return crit
