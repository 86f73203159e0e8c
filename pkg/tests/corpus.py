"""Hand-built network corpus shared by property and acceptance tests.

Every model in corpus_models() is monotone and certifiable (node derivative
sups strictly dominate the coupling row sums); mutant_models() seeds one
negative off-diagonal coupling entry into ten of them.  All constructions
are deterministic.
"""

import numpy as np

from sepcert.model import CouplingSchedule, NetworkModel, NodeSpec

# node dynamics with known derivative sups on symmetric boxes
STABLE_SOURCES = [
    ("-x - x^3", 2.0),          # sup dg = -1
    ("-2*x + tanh(x)", 3.0),    # in [-2, -1]
    ("-3*x + sin(x)", 4.0),     # in [-4, -2]
    ("-1.5*x - x^5", 1.5),      # sup -1.5
    ("-2*x + x^2 / 4", 1.0),    # sup -1.5 on [-1, 1]
    ("-2*x + x*sin(t)", 2.0),   # sup -1, time-varying
    ("-x - tanh(2*x)", 2.5),    # in [-3, -1]
]


def _nodes(count, which=None, scale=1.0):
    out = []
    for i in range(count):
        src, half = STABLE_SOURCES[(which if which is not None else i) % len(STABLE_SOURCES)]
        out.append(NodeSpec.from_source(f"n{i}", src, -half * scale, half * scale))
    return out


def _ring(n, w_fwd, w_back):
    K = np.zeros((n, n))
    for i in range(n):
        K[i, (i + 1) % n] += w_fwd
        K[i, (i - 1) % n] += w_back
    return K


def _chain(n, w_fwd, w_back):
    K = np.zeros((n, n))
    for i in range(n - 1):
        K[i + 1, i] += w_fwd
        K[i, i + 1] += w_back
    return K


def _star(n, w_out, w_in):
    K = np.zeros((n, n))
    for i in range(1, n):
        K[i, 0] = w_out  # hub drives spokes
        K[0, i] = w_in
    return K


def _grid(rows, cols, w):
    n = rows * cols
    K = np.zeros((n, n))
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < rows and 0 <= cc < cols:
                    K[i, rr * cols + cc] = w
    return K


def corpus_models():
    models = []

    def add(nodes, K, horizon=(0.0, 10.0), input_matrix=None):
        models.append(NetworkModel.build(nodes, K, horizon, input_matrix=input_matrix))

    # 1: the two-node cubic pair
    add(_nodes(2, which=0), np.array([[0.0, 0.5], [0.5, 0.0]]))
    # 2: asymmetric tanh pair
    add(_nodes(2, which=1), np.array([[0.0, 0.4], [0.6, 0.0]]))
    # 3: strongly asymmetric pair (distinct p and q weights)
    add(_nodes(2, which=1), np.array([[0.0, 0.05], [0.9, 0.0]]))
    # 4: directed triangle
    add(_nodes(3, which=0), _ring(3, 0.35, 0.25))
    # 5: 5-chain on tight boxes
    add(_nodes(5, which=4), _chain(5, 0.4, 0.4))
    # 6: star with a fast hub
    add(_nodes(6, which=2), _star(6, 0.3, 0.15))
    # 7: 8-ring, mixed node types
    add(_nodes(8), _ring(8, 0.3, 0.2))
    # 8: 3x3 lattice with time-varying nodes
    add(_nodes(9, which=5), _grid(3, 3, 0.2))
    # 9: 12-chain of quintic nodes
    add(_nodes(12, which=3), _chain(12, 0.5, 0.3))
    # 10: 20-ring with skip links
    K = _ring(20, 0.2, 0.15)
    for i in range(20):
        K[i, (i + 5) % 20] += 0.1
    add(_nodes(20), K)
    # 11: time-tabulated coupling, weak then strong
    sched = CouplingSchedule([0.0, 5.0],
                             [np.array([[0.0, 0.2], [0.2, 0.0]]),
                              np.array([[0.0, 0.45], [0.45, 0.0]])])
    models.append(NetworkModel(nodes=tuple(_nodes(2, which=0)), coupling=sched,
                               horizon=(0.0, 10.0)))
    # 12: negative self-coupling folded into K
    K = _ring(4, 0.3, 0.3)
    np.fill_diagonal(K, -0.5)
    add(_nodes(4, which=0), K)
    # 13: dense 4-node with small weights
    K = np.full((4, 4), 0.15)
    np.fill_diagonal(K, 0.0)
    add(_nodes(4, which=6), K)
    # 14: bipartite 6-node
    K = np.zeros((6, 6))
    for i in range(3):
        for j in range(3, 6):
            K[i, j] = 0.12
            K[j, i] = 0.16
    add(_nodes(6), K)
    # 15: two clusters with a weak bridge
    K = np.zeros((7, 7))
    K[:3, :3] = 0.25
    K[3:, 3:] = 0.18
    np.fill_diagonal(K, 0.0)
    K[2, 3] = K[3, 2] = 0.05
    add(_nodes(7, which=0), K)
    # 16: model with an input channel (used by synthesis runs)
    add(_nodes(2, which=0), np.array([[0.0, 0.3], [0.3, 0.0]]),
        input_matrix=np.eye(2))
    # 17: short-horizon tight boxes
    add(_nodes(3, which=4, scale=0.8), _ring(3, 0.3, 0.3), horizon=(0.0, 4.0))
    # 18: long horizon, slow nodes
    add(_nodes(4, which=6), _chain(4, 0.35, 0.25), horizon=(0.0, 25.0))
    # 19: 10-node directed cycle only
    add(_nodes(10, which=1), _ring(10, 0.6, 0.0))
    # 20: 15-node chain with skips
    K = _chain(15, 0.3, 0.2)
    for i in range(13):
        K[i + 2, i] += 0.08
    add(_nodes(15), K)
    # 21: wide boxes, quintic nodes
    add(_nodes(5, which=3, scale=1.2), _ring(5, 0.35, 0.2))
    # 22: hub-and-ring hybrid
    K = _ring(6, 0.2, 0.2) + _star(6, 0.1, 0.1)
    add(_nodes(6, which=2), K)
    return models


def mutant_models():
    """Ten corpus models with one off-diagonal coupling entry made negative."""
    base = corpus_models()
    picks = [0, 1, 3, 4, 5, 6, 7, 8, 12, 14]
    out = []
    for b, mi in enumerate(picks):
        m = base[mi]
        K = m.coupling.matrices[0].copy()
        # flip the first structurally present off-diagonal entry (row-major)
        flipped = False
        n = m.n
        for i in range(n):
            for j in range(n):
                if i != j and K[i, j] > 0:
                    K[i, j] = -0.4 - 0.05 * b
                    flipped = True
                    break
            if flipped:
                break
        assert flipped
        out.append(NetworkModel.build(list(m.nodes), K, m.horizon))
    return out
