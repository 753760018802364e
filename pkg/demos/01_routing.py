"""
Shortest-path routing on a complete network
===========================================

Every ordered node pair is an arc, so ``p`` nodes give ``p*p - p`` arcs.
Traffic between two nodes follows the cheapest path and the routing matrix
``A`` maps OD volumes to arc loads.
"""

# %%
import numpy as np

from odce.graph import Network, arc_index, reduce_system, routing_matrix, shortest_paths

net = Network(4)
print("nodes", net.p, "arcs", net.n)

# %%
# Make the direct arc 0 -> 2 expensive so that traffic detours through node 1.
costs = np.ones(net.n)
costs[arc_index(net, 0, 2)] = 5.0
table = shortest_paths(net, costs)
print("path 0 -> 2:", table.path_nodes(0, 2), "cost", table.dist[0, 2])

# %%
A = routing_matrix(net, table)
X = np.zeros(net.n)
X[arc_index(net, 0, 2)] = 3.0  # three units from node 0 to node 2
Y = A @ X
print("loaded arcs:", [net.arc_nodes(k) for k in np.flatnonzero(Y)])

# %%
# Arc 0 -> 2 now carries nothing, so the load equations lose a row.
red = reduce_system(A, A @ np.ones(net.n))
print("rank", red.rank, "nullity", red.nullity)
