"""Smoke test for the act_py extension: build with maturin, then run

    python python/smoke_test.py
"""

from pathlib import Path

import act_py

ROOT = Path(__file__).resolve().parent.parent


def main():
    assert act_py.tokenize("Bushfire near Katoomba http://t.co/x") == ["bushfire", "near", "katoomba"], act_py.tokenize(
        "Bushfire near Katoomba http://t.co/x"
    )
    ents = act_py.extract_entities("RT @NSWRFS: #NSWfires update http://t.co/abc")
    assert ents["hashtags"] == ["nswfires"] and ents["mentions"] == ["nswrfs"], ents
    assert ents["is_retweet"]

    p = act_py.Pipeline()
    out = p.process("a", "2013-10-17T01:00:00Z", "someone", "bushfire smoke over katoomba", lon=150.312, lat=-33.714)
    assert out["outcome"] == "assigned" and out["created"], out
    out = p.process("b", "2013-10-17T01:05:00Z", "other", "more bushfire smoke at katoomba")
    assert out["outcome"] == "assigned", out
    assert p.process("a", "2013-10-17T01:06:00Z", "x", "bushfire again")["outcome"] == "duplicate_id"
    assert p.health()["events_count"] == 0  # nothing published yet
    p.publish()
    events = p.events()
    assert len(events) >= 1, events
    detail = p.event(events[0]["id"])
    assert detail["post_count"] >= 1
    try:
        p.event("missing")
        raise AssertionError("expected KeyError")
    except KeyError:
        pass
    try:
        p.events(limit=0)
        raise AssertionError("expected ValueError")
    except ValueError:
        pass

    q = act_py.Pipeline(config=str(ROOT / "config" / "act.toml"))
    read = q.replay(str(ROOT / "data" / "corpus" / "synthetic_5000.jsonl"))
    assert read == 5000, read
    health = q.health()
    assert health["posts_ingested"] == 5000, health
    summaries = q.export()
    assert len(summaries) == health["events_count"]
    first = summaries[0]["id"]
    assert len(q.related(first, k=3)) <= 3
    assert len(q.media(first)) <= 12
    terms = q.terms(k=10, geotagged=True)
    assert len(terms) <= 10 and all(t["count"] > 0 for t in terms)
    assert all(a["id"] for a in q.agencies(limit=5))
    print(f"ok: {health['events_count']} events, top terms {[t['term'] for t in terms[:5]]}")


if __name__ == "__main__":
    main()
