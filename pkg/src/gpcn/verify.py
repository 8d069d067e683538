"""Self-check suite behind ``gpcn verify``.

Each check builds small random instances, compares a fast path with an
independent computation and returns ``(name, passed, detail)``.
"""

from __future__ import annotations

import tempfile
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .bounds import BoundInputs, theorem1_coefficients, theorem1_rhs, theorem2_rhs
from .data_io import GraphDataset, load_dataset, save_dataset
from .graph import (
    LabelVector,
    SparseAdjacency,
    build_csr,
    class_homophily,
    edge_homophily,
    normalized_adjacency,
    spectrum,
    spmm,
)
from .models import (
    ALL_KINDS,
    ModelConfig,
    binomial_coefficients,
    forward,
    gpcn_forward_polynomial,
    gpcn_forward_recursive,
    init_params,
    loss_fn,
    prepare_graph,
)
from .oracles import (
    class_homophily_bruteforce,
    edge_homophily_bruteforce,
    jacobi_eigenvalues,
)

Result = tuple[str, bool, str]


def _graph(rng, n, p=0.3):
    iu = np.triu_indices(n, 1)
    keep = rng.random(iu[0].size) < p
    perm = rng.permutation(n)
    edges = np.vstack([np.column_stack([iu[0][keep], iu[1][keep]]), np.column_stack([perm[:-1], perm[1:]])])
    return build_csr(edges, n)


def _labels(rng, n, C):
    return np.concatenate([np.arange(C), rng.integers(0, C, n - C)])


def _instance(rng, kind, **kw):
    n = int(rng.integers(4, 11))
    C, q = 3, 4
    cfg = ModelConfig(kind=kind, T=int(rng.integers(1, 3)), L=kw.pop("L", int(rng.integers(1, 5))),
                      hidden=int(rng.integers(2, 7)), gamma=kw.pop("gamma", 0.25), **kw)
    g = prepare_graph(_graph(rng, n), rng.standard_normal((n, q)))
    params = init_params(cfg, n, q, C, rng)
    if "theta" in params:
        params["theta"].data[...] += 0.2 * rng.standard_normal(params["theta"].shape)
    if "mu_raw" in params:
        params["mu_raw"].data[...] = rng.standard_normal()
    return cfg, params, g, LabelVector(_labels(rng, n, C), C)


def check_spmm(rng) -> Result:
    worst = 0.0
    for _ in range(10):
        n = int(rng.integers(2, 60))
        dense = rng.standard_normal((n, n)) * (rng.random((n, n)) < 0.2)
        X = rng.standard_normal((n, 3))
        ref = dense @ X
        worst = max(worst, np.linalg.norm(spmm(SparseAdjacency.from_dense(dense), X) - ref) / max(np.linalg.norm(ref), 1e-300))
    return "spmm matches dense product", worst <= 1e-12, f"max rel err {worst:.2e}"


def check_homophily(rng) -> Result:
    worst = 0.0
    for _ in range(10):
        n, C = int(rng.integers(6, 30)), int(rng.integers(2, 5))
        a = _graph(rng, n, 0.2)
        lab = _labels(rng, n, C)
        y = LabelVector(lab, C)
        d = a.to_dense()
        worst = max(worst, abs(edge_homophily(a, y) - edge_homophily_bruteforce(d, lab)))
        worst = max(worst, abs(class_homophily(a, y) - class_homophily_bruteforce(d, lab, C)))
    return "homophily matches neighbour enumeration", worst <= 1e-12, f"max abs err {worst:.2e}"


def check_spectrum(rng) -> Result:
    worst = 0.0
    top_ok = True
    for _ in range(5):
        n = int(rng.integers(3, 25))
        a = normalized_adjacency(_graph(rng, n))
        ev = spectrum(a).eigenvalues
        worst = max(worst, float(np.max(np.abs(ev - jacobi_eigenvalues(a.to_dense())))))
        top_ok &= abs(ev[0] - 1.0) <= 1e-8 and bool(np.all(np.abs(ev) <= 1 + 1e-9))
    return "spectrum matches Jacobi sweeps", worst <= 1e-8 and top_ok, f"max abs err {worst:.2e}"


def check_recursion(rng) -> Result:
    worst = 0.0
    for L in range(1, 9):
        cfg, params, g, _ = _instance(rng, "GPCN", L=L, gamma=float(2.0 ** rng.integers(-6, 3)))
        rec = gpcn_forward_recursive(g.X, g.a_tilde, params, cfg).data
        poly = gpcn_forward_polynomial(g.X, g.a_tilde, params, cfg).data
        worst = max(worst, float(np.max(np.abs(rec - poly)) / (1 + np.max(np.abs(rec)))))
    return "residual recursion equals polynomial form", worst < 1e-10, f"max rel err {worst:.2e}"


def check_reductions(rng) -> Result:
    worst = 0.0
    cfg, params, g, _ = _instance(rng, "GPCN", gamma=0.0)
    mlp = ModelConfig(kind="MLP", T=cfg.T, hidden=cfg.hidden)
    worst = max(worst, float(np.max(np.abs(forward(cfg, params, g).data - forward(mlp, params, g).data))))
    cfg, params, g, _ = _instance(rng, "GPCN_LINK", mu_mode="clamp")
    params["mu_raw"].data[...] = 1.0
    d = forward(cfg, params, g).data - forward(cfg.with_(kind="GPCN"), params, g).data
    worst = max(worst, float(np.max(np.abs(d))))
    cfg, params, g, _ = _instance(rng, "AGPCN")
    params["theta"].data[...] = binomial_coefficients(cfg.L, cfg.gamma)
    d = forward(cfg, params, g).data - forward(cfg.with_(kind="GPCN"), params, g).data
    worst = max(worst, float(np.max(np.abs(d))))
    return "gamma=0, mu=1 and binomial-theta reductions", worst <= 1e-12, f"max abs diff {worst:.2e}"


def check_gradients(rng) -> Result:
    worst = 0.0
    for kind in ALL_KINDS:
        cfg, params, g, y = _instance(rng, kind)
        mask = np.arange(g.n_nodes) % 2 == 0
        f = lambda *_: loss_fn(cfg, params, g, y, mask, weight_decay=0.01)
        worst = max(worst, ad.gradcheck(f, list(params.values())))
    return "gradient check on every model kind", worst < 1e-4, f"max rel err {worst:.2e}"


def check_bounds(rng) -> Result:
    worst = 0.0
    for _ in range(10):
        n = int(rng.integers(4, 20))
        spec = spectrum(normalized_adjacency(_graph(rng, n)))
        T, L = int(rng.integers(1, 3)), int(rng.integers(1, 6))
        inp = BoundInputs(spec, tuple(rng.uniform(0.1, 2, T + 2)), float(rng.uniform()), float(rng.uniform()),
                          float(rng.uniform(0.05, 1)), T, L, 2, n - 2, float(rng.uniform(1, 5)))
        t1 = theorem1_rhs(inp)
        t2 = theorem2_rhs(inp.with_(theta=tuple(theorem1_coefficients(L, inp.gamma))))
        worst = max(worst, abs(t1 - t2) / max(abs(t1), 1e-300))
    return "adaptive bound reproduces fixed-gamma bound", worst <= 1e-12, f"max rel err {worst:.2e}"


def check_roundtrip(rng) -> Result:
    n = 15
    ds = GraphDataset("v", _graph(rng, n), rng.standard_normal((n, 4)), LabelVector(_labels(rng, n, 3), 3))
    ok = True
    with tempfile.TemporaryDirectory() as d:
        for fmt in ("text", "binary"):
            p = Path(d) / fmt
            save_dataset(ds, p, fmt)
            back = load_dataset(p)
            ok &= back.X.tobytes() == ds.X.tobytes() and back.A.col_indices.tobytes() == ds.A.col_indices.tobytes()
            ok &= back.y.labels.tobytes() == ds.y.labels.tobytes()
    return "dataset save/load round trip", bool(ok), "text and binary"


CHECKS: tuple[Callable[[np.random.Generator], Result], ...] = (
    check_spmm, check_homophily, check_spectrum, check_recursion,
    check_reductions, check_gradients, check_bounds, check_roundtrip,
)


def run_all(seed: int = 0) -> list[Result]:
    out = []
    for i, chk in enumerate(CHECKS):
        rng = np.random.default_rng([seed, i])
        try:
            name, ok, detail = chk(rng)
            out.append((name, bool(ok), detail))
        except Exception as e:  # a crashing check is a failing check
            out.append((chk.__name__, False, f"{type(e).__name__}: {e}"))
    return out
