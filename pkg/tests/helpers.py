"""Policy builders and schedules shared by the proxy, CLI and acceptance tests."""

import random

from exacml.bench import build_policy
from exacml.policy import AGGREGATION, SLIDING_WINDOW, make_obligation, policy_to_xml

NEA = {"name": "NEA", "role": "owner"}


def window_policy_xml(role, database, table, columns, start, end, size=1, step=1, f="avg"):
    obligations = [make_obligation(AGGREGATION, function=f),
                   make_obligation(SLIDING_WINDOW, column="SamplingTime", start=start, end=end,
                                   size=size, step=step, unit="hours")]
    return policy_to_xml(build_policy(role, database, table, columns, obligations))


def open_policy_xml(role, database, table, columns):
    return policy_to_xml(build_policy(role, database, table, columns, []))


def resource(data_id, table, columns, role, **extra):
    return dict({"data_id": data_id, "table": table, "columns": list(columns), "actions": ["read"],
                 "values": {}, "credentials": {"name": "analyst", "role": role}}, **extra)


def run_coherence_schedule(c, seed, n_requests, n_mutations):
    """Interleave data requests with policy loads/removals at random points.

    Returns violation counts: replies served from an entry cached before the
    latest mutation, decisions disagreeing with the active policies, and
    purges that left entries behind; plus the number of cache hits.
    """
    rng = random.Random(seed)
    roles = ["r0", "r1", "r2"]
    loaded = {}
    mutation_points = set(rng.sample(range(n_requests), n_mutations))
    counts = {"stale": 0, "wrong_decision": 0, "nonempty_purge": 0, "hits": 0, "mutations": 0}
    for step in range(n_requests):
        if step in mutation_points:
            role = rng.choice(roles)
            if role in loaded:
                c.client.remove_policy("weather1", loaded.pop(role), NEA)
            else:
                loaded[role] = c.client.load_policy("weather1", open_policy_xml(
                    role, "weather_data", "WeatherInfo", ["RainRate"]), NEA)
            counts["mutations"] += 1
            purge = c.proxy.message_log[-1]
            # the proxy records the cache size right after purging
            if purge[0] != "purge" or purge[3] != 0 or len(c.proxy.cache) != 0:
                counts["nonempty_purge"] += 1
        role = rng.choice(roles)
        (result,) = c.client.query_data([resource("weather1", "WeatherInfo", ["RainRate"], role)])["results"]
        if result["decision"] != ("Permit" if role in loaded else "Deny"):
            counts["wrong_decision"] += 1
        if result["cached"]:
            counts["hits"] += 1
            if result["cache_epoch"] != c.proxy.cache.epoch:
                counts["stale"] += 1
    return counts
