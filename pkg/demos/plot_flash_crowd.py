"""
A flash crowd against one origin
================================

A thousand clients fetch the same 100-block file through one router. With
hash-addressed blocks the router answers from its cache; without, every
block crosses the origin link once per client.
"""

from cane.netsim import flash_crowd_scenario, run_scenario

scenario = flash_crowd_scenario(n_clients=1000, n_blocks=100)
cached = run_scenario(scenario, seed=7)
plain = run_scenario(scenario, seed=7, baseline=True)

print("origin transmissions, cached  :", cached.total_origin_transmissions)
print("origin transmissions, baseline:", plain.total_origin_transmissions)
print("router cache hits             :", cached.total_cache_hits)

# Links carry no capacity limit here, so the difference shows up as traffic
# on the origin's uplink rather than as latency.
for name, m in (("cached", cached), ("baseline", plain)):
    print(f"{name:9s} origin-router link transmissions: {m.link_count('origin', 'router')}")
