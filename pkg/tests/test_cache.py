"""Tests for the SQLite result cache."""

import endow.cache as cache_mod
from endow.cache import Cache, cached_b3_crit


def test_set_and_get(tmp_path):
    cache = Cache(tmp_path)
    key = Cache.make_key("b3_crit", b1=1.0, b2=1.5, R=0.5, tol=1e-6)
    assert cache.get(key) is None
    cache.set(key, {"b3_crit": 0.8})
    assert cache.get(key) == {"b3_crit": 0.8}
    assert key != Cache.make_key("b3_crit", b1=1.0, b2=1.5, R=0.5, tol=1e-7)


def test_expired_entries_disappear(tmp_path):
    cache = Cache(tmp_path)
    cache.set("old", {"v": 1}, ttl=-1)
    cache.set("new", {"v": 2})
    assert cache.cleanup_expired() == 1
    assert cache.get("old") is None
    assert cache.get("new") == {"v": 2}
    cache.clear()
    assert cache.get("new") is None


def test_cached_b3_crit_bisects_once(tmp_path, monkeypatch):
    calls = []

    def fake(b1, b2, R, tol, opts=None):
        calls.append((b1, b2, R, tol))
        return 0.75

    monkeypatch.setattr(cache_mod, "find_b3_crit", fake)
    cache = Cache(tmp_path)
    assert cached_b3_crit(1.0, 1.5, 0.5, 1e-6, cache=cache) == 0.75
    assert cached_b3_crit(1.0, 1.5, 0.5, 1e-6, cache=cache) == 0.75
    assert cached_b3_crit(1.0, 2.0, 0.5, 1e-6, cache=cache) == 0.75
    assert calls == [(1.0, 1.5, 0.5, 1e-6), (1.0, 2.0, 0.5, 1e-6)]


def test_cache_bypassed_when_disabled(monkeypatch):
    # settings.cache_enabled is off in the test session
    calls = []
    monkeypatch.setattr(cache_mod, "find_b3_crit",
                        lambda b1, b2, R, tol, opts=None: calls.append(1) or 0.9)
    assert cached_b3_crit(1.0, 1.5, 0.5, 1e-6) == 0.9
    assert cached_b3_crit(1.0, 1.5, 0.5, 1e-6) == 0.9
    assert len(calls) == 2
