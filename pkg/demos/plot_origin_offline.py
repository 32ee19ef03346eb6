"""
Taking the origin offline
=========================

Warm the router with one download, kill the origin, and keep serving.
"""

from cane.netsim import build_network, compare_location_addressed, run, star_topology

net = build_network(star_topology(n_clients=500, n_blocks=10))
run(net, net.requests_for("c0000", "file"))
net.set_alive("origin", False)

later = [r for i in range(500) for r in net.requests_for(f"c{i:04d}", "file", tick=100)]
m = run(net, later)
print(f"with caches: {m.completed} completed, {m.failed} failed")

m = compare_location_addressed(net, later)
print(f"without    : {m.completed} completed, {m.failed} failed")
