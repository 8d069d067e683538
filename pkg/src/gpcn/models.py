"""Forward passes for the polynomial convolution family and its baselines.

All models are written against :mod:`gpcn.autodiff`, so one training loop
covers every kind.  Parameter naming follows the layer layout:

* ``W0 .. W{T-1}``  initial ReLU layers
* ``W_res``         the single weight shared by all residual steps
* ``W_out``         output head
* ``W_A``           node-indexed weight of the adjacency branch
* ``theta``         per-order coefficients (1 x (L+1), or 1 x L for GPRGNN)
* ``mu_raw``        unconstrained mixing scalar
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, fields, replace
from math import comb
from typing import Iterator, Literal

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError
from .graph import SparseAdjacency, normalized_adjacency


class ModelKind(str, enum.Enum):
    MLP = "MLP"
    GCN = "GCN"
    SGC = "SGC"
    GPRGNN = "GPRGNN"
    LINK = "LINK"
    LINKX = "LINKX"
    GPCN = "GPCN"
    GPCN_LINK = "GPCN_LINK"
    AGPCN = "AGPCN"
    AGPCN_LINK = "AGPCN_LINK"

    @classmethod
    def parse(cls, value) -> "ModelKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().upper().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown model kind {value!r}") from None

    @property
    def has_link(self) -> bool:
        return self in (ModelKind.GPCN_LINK, ModelKind.AGPCN_LINK)

    @property
    def adaptive(self) -> bool:
        return self in (ModelKind.AGPCN, ModelKind.AGPCN_LINK)

    @property
    def polynomial(self) -> bool:
        return self in (ModelKind.GPCN, ModelKind.GPCN_LINK, ModelKind.AGPCN, ModelKind.AGPCN_LINK)


ALL_KINDS = tuple(ModelKind)


@dataclass(frozen=True)
class ModelConfig:
    kind: ModelKind = ModelKind.GPCN
    T: int = 1
    L: int = 2
    hidden: int = 64
    gamma: float = 0.25
    dropout: float = 0.0
    sgc_power: int = 2
    gcn_layers: int = 2
    gpr_init: Literal["ppr", "uniform", "delta"] = "ppr"
    gpr_alpha: float = 0.1
    # sigmoid keeps mu in (0, 1); clamp reaches the endpoints exactly
    mu_mode: Literal["sigmoid", "clamp"] = "sigmoid"
    # adjacency used by the W_A branch of the LINK hybrids
    link_adjacency: Literal["normalized", "raw"] = "normalized"
    link_dropout: bool = False
    # penalty weight on theta; None means "use the run's weight decay"
    theta_decay: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind.parse(self.kind))
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.L < 1:
            raise ConfigError("L must be >= 1")
        if self.hidden < 1:
            raise ConfigError("hidden must be >= 1")
        if self.gamma < 0 or not np.isfinite(self.gamma):
            raise ConfigError("gamma must be a finite non-negative number")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.sgc_power < 0:
            raise ConfigError("sgc_power must be >= 0")
        if self.gcn_layers < 1:
            raise ConfigError("gcn_layers must be >= 1")
        if self.gpr_init not in ("ppr", "uniform", "delta"):
            raise ConfigError(f"unknown gpr_init {self.gpr_init!r}")
        if self.mu_mode not in ("sigmoid", "clamp"):
            raise ConfigError(f"unknown mu_mode {self.mu_mode!r}")
        if self.link_adjacency not in ("normalized", "raw"):
            raise ConfigError(f"unknown link_adjacency {self.link_adjacency!r}")
        if self.theta_decay is not None and self.theta_decay < 0:
            raise ConfigError("theta_decay must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


class ParameterSet(dict):
    """Named trainable tensors."""

    def tensors(self) -> Iterator[Tensor]:
        return iter(self.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, arr in snap.items():
            self[k].data[...] = arr

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "ParameterSet":
        return cls({k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()})


DECAY_EXEMPT = frozenset({"mu_raw", "theta"})


@dataclass
class GraphInputs:
    """Constant operands shared by every forward pass on one graph."""

    X: Tensor
    a_raw: SparseAdjacency
    a_tilde: SparseAdjacency

    @property
    def n_nodes(self) -> int:
        return self.X.rows

    @property
    def n_features(self) -> int:
        return self.X.cols

    def link_operator(self, cfg: ModelConfig) -> SparseAdjacency:
        return self.a_tilde if cfg.link_adjacency == "normalized" else self.a_raw


def prepare_graph(a_raw: SparseAdjacency, X, symmetrize="auto", dtype=np.float64) -> GraphInputs:
    X = np.asarray(X, dtype=dtype)
    if X.shape[0] != a_raw.n_rows:
        raise ConfigError("feature rows must match adjacency order")
    a_tilde = normalized_adjacency(a_raw, symmetrize)
    return GraphInputs(Tensor(X, dtype=dtype), a_raw.astype(dtype), a_tilde.astype(dtype))


# --------------------------------------------------------------------------- init


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float64) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


def binomial_coefficients(L: int, gamma: float) -> np.ndarray:
    """C(L, k) γ^k for k = 0..L, the expansion of (I + γ Ā · W)^L."""
    return np.array([comb(L, k) * gamma**k for k in range(L + 1)], dtype=np.float64)


def literal_coefficients(L: int, gamma: float) -> np.ndarray:
    """1, L γ^k for 0 < k < L, and γ^L: the literal closed-form coefficients."""
    c = np.array([L * gamma**k for k in range(L + 1)], dtype=np.float64)
    c[0] = 1.0
    c[L] = gamma**L
    return c


def gpr_coefficients(L: int, init: str, alpha: float) -> np.ndarray:
    if init == "ppr":
        c = alpha * (1.0 - alpha) ** np.arange(L)
        c[-1] = (1.0 - alpha) ** (L - 1)
        return c
    if init == "uniform":
        return np.full(L, 1.0 / L)
    c = np.zeros(L)
    c[0] = 1.0
    return c


def init_params(
    cfg: ModelConfig,
    n_nodes: int,
    n_features: int,
    n_classes: int,
    rng: np.random.Generator,
    dtype=np.float64,
) -> ParameterSet:
    """Glorot-uniform weights; theta starts at the binomial pattern and mu at 0.5."""
    h, C, q = cfg.hidden, n_classes, n_features
    arrays: dict[str, np.ndarray] = {}
    kind = cfg.kind

    def mlp_stack(prefix_dim: int) -> None:
        dims = [prefix_dim] + [h] * cfg.T
        for i in range(cfg.T):
            arrays[f"W{i}"] = glorot(rng, dims[i], dims[i + 1], dtype)

    if kind == ModelKind.MLP:
        mlp_stack(q)
        arrays["W_out"] = glorot(rng, h, C, dtype)
    elif kind == ModelKind.GCN:
        dims = [q] + [h] * (cfg.gcn_layers - 1) + [C]
        for i in range(cfg.gcn_layers):
            arrays[f"W{i}"] = glorot(rng, dims[i], dims[i + 1], dtype)
    elif kind == ModelKind.SGC:
        arrays["W"] = glorot(rng, q, C, dtype)
    elif kind == ModelKind.GPRGNN:
        mlp_stack(q)
        arrays["W_out"] = glorot(rng, h, C, dtype)
        arrays["theta"] = gpr_coefficients(cfg.L, cfg.gpr_init, cfg.gpr_alpha).reshape(1, -1).astype(dtype)
    elif kind == ModelKind.LINK:
        arrays["W_A"] = glorot(rng, n_nodes, C, dtype)
    elif kind == ModelKind.LINKX:
        arrays["W_Aenc"] = glorot(rng, n_nodes, h, dtype)
        arrays["W_Xenc"] = glorot(rng, q, h, dtype)
        arrays["W_cat"] = glorot(rng, 2 * h, h, dtype)
        arrays["W_f1"] = glorot(rng, h, h, dtype)
        arrays["W_out"] = glorot(rng, h, C, dtype)
    else:
        mlp_stack(q)
        arrays["W_res"] = glorot(rng, h, h, dtype)
        arrays["W_out"] = glorot(rng, h, C, dtype)
        if kind.has_link:
            arrays["W_A"] = glorot(rng, n_nodes, h, dtype)
            arrays["mu_raw"] = np.zeros((1, 1), dtype=dtype)
        if kind.adaptive:
            arrays["theta"] = binomial_coefficients(cfg.L, cfg.gamma).reshape(1, -1).astype(dtype)
    return ParameterSet.from_arrays(arrays)


# --------------------------------------------------------------------------- building blocks


def _initial_layers(X: Tensor, params: ParameterSet, cfg: ModelConfig, training, rng) -> Tensor:
    Z = X
    for i in range(cfg.T):
        Z = ad.relu(ad.matmul(Z, params[f"W{i}"]))
        Z = ad.dropout(Z, cfg.dropout, rng, training)
    return Z


def mu_value(params: ParameterSet, cfg: ModelConfig) -> Tensor:
    raw = params["mu_raw"]
    return ad.sigmoid(raw) if cfg.mu_mode == "sigmoid" else ad.clip(raw, 0.0, 1.0)


def mu_scalar(params: ParameterSet, cfg: ModelConfig) -> float:
    raw = float(params["mu_raw"].data[0, 0])
    if cfg.mu_mode == "sigmoid":
        return float(1.0 / (1.0 + np.exp(-raw)))
    return float(min(max(raw, 0.0), 1.0))


def residual_trunk(X_T: Tensor, A: SparseAdjacency, W: Tensor, gamma: float, L: int) -> Tensor:
    """L weight-shared steps Z <- Z + γ Ā Z W."""
    Z = X_T
    for _ in range(L):
        Z = ad.add(Z, ad.scale(ad.spmm_const(A, ad.matmul(Z, W)), gamma))
    return Z


def propagated_terms(X_T: Tensor, A: SparseAdjacency, W: Tensor, L: int) -> list[Tensor]:
    """[X_T, Ā X_T W, Ā² X_T W², ..., Ā^L X_T W^L]."""
    terms = [X_T]
    P = X_T
    for _ in range(L):
        P = ad.spmm_const(A, ad.matmul(P, W))
        terms.append(P)
    return terms


def polynomial_trunk(X_T: Tensor, A: SparseAdjacency, W: Tensor, coeffs) -> Tensor:
    """Σ_k c_k Ā^k X_T W^k with coefficients given as floats or a 1 x (L+1) tensor."""
    if isinstance(coeffs, Tensor):
        L = coeffs.cols - 1
        scal = [ad.element(coeffs, 0, k) for k in range(L + 1)]
    else:
        L = len(coeffs) - 1
        scal = [float(c) for c in coeffs]
    terms = propagated_terms(X_T, A, W, L)
    out = ad.scale(terms[0], scal[0])
    for k in range(1, L + 1):
        out = ad.add(out, ad.scale(terms[k], scal[k]))
    return out


def gpr_combine(H0: Tensor, A: SparseAdjacency, theta, L: int) -> Tensor:
    """Σ_{k=0}^{L-1} θ_k Ã^k H0."""
    if isinstance(theta, Tensor):
        scal = [ad.element(theta, 0, k) for k in range(L)]
    else:
        scal = [float(t) for t in np.ravel(theta)[:L]]
    H = H0
    out = ad.scale(H, scal[0])
    for k in range(1, L):
        H = ad.spmm_const(A, H)
        out = ad.add(out, ad.scale(H, scal[k]))
    return out


def _head(Z: Tensor, params: ParameterSet, cfg: ModelConfig, training, rng) -> Tensor:
    Z = ad.dropout(Z, cfg.dropout, rng, training)
    return ad.matmul(Z, params["W_out"])


def _link_mix(trunk: Tensor, g: GraphInputs, params, cfg, training, rng) -> Tensor:
    trunk = ad.dropout(trunk, cfg.dropout, rng, training)
    branch = ad.spmm_const(g.link_operator(cfg), params["W_A"])
    if cfg.link_dropout:
        branch = ad.dropout(branch, cfg.dropout, rng, training)
    mixed = ad.affine_combine(mu_value(params, cfg), trunk, branch)
    return ad.matmul(mixed, params["W_out"])


# --------------------------------------------------------------------------- models


def mlp_forward(X: Tensor, params: ParameterSet, cfg: ModelConfig, training=False, rng=None) -> Tensor:
    return ad.matmul(_initial_layers(X, params, cfg, training, rng), params["W_out"])


def gcn_forward(X, A_tilde, params, cfg, training=False, rng=None) -> Tensor:
    """Ã ReLU(Ã X W0) W1 for the default depth of two."""
    Z = X
    for i in range(cfg.gcn_layers):
        Z = ad.spmm_const(A_tilde, ad.matmul(Z, params[f"W{i}"]))
        if i < cfg.gcn_layers - 1:
            Z = ad.relu(Z)
            Z = ad.dropout(Z, cfg.dropout, rng, training)
    return Z


def sgc_forward(X, A_tilde, params, cfg, training=False, rng=None) -> Tensor:
    Z = X
    for _ in range(cfg.sgc_power):
        Z = ad.spmm_const(A_tilde, Z)
    return ad.matmul(Z, params["W"])


def gprgnn_forward(X, A_tilde, params, cfg, training=False, rng=None) -> Tensor:
    H0 = mlp_forward(X, params, cfg, training, rng)
    return gpr_combine(H0, A_tilde, params["theta"], cfg.L)


def link_forward(A_raw: SparseAdjacency, params: ParameterSet) -> Tensor:
    return ad.spmm_const(A_raw, params["W_A"])


def linkx_forward(A_raw, X, params, cfg, training=False, rng=None) -> Tensor:
    h_a = ad.spmm_const(A_raw, params["W_Aenc"])
    h_x = ad.matmul(X, params["W_Xenc"])
    mixed = ad.matmul(ad.concat(h_a, h_x), params["W_cat"])
    Z = ad.relu(ad.add(ad.add(mixed, h_a), h_x))
    Z = ad.dropout(Z, cfg.dropout, rng, training)
    Z = ad.relu(ad.matmul(Z, params["W_f1"]))
    Z = ad.dropout(Z, cfg.dropout, rng, training)
    return ad.matmul(Z, params["W_out"])


def gpcn_trunk(X, A_tilde, params, cfg, training=False, rng=None) -> Tensor:
    X_T = _initial_layers(X, params, cfg, training, rng)
    return residual_trunk(X_T, A_tilde, params["W_res"], cfg.gamma, cfg.L)


def gpcn_forward_recursive(X, A_tilde, params, cfg, training=False, rng=None) -> Tensor:
    if cfg.L < 1:
        raise ConfigError("GPCN needs at least one residual layer")
    return _head(gpcn_trunk(X, A_tilde, params, cfg, training, rng), params, cfg, training, rng)


def gpcn_forward_polynomial(
    X, A_tilde, params, cfg, training=False, rng=None,
    coefficients: Literal["canonical", "paper"] = "canonical",
) -> Tensor:
    """Closed-form expansion of the residual recursion.

    ``canonical`` uses C(L, k) γ^k and agrees with the recursion;
    ``paper`` uses literal L γ^k interior coefficients.
    """
    X_T = _initial_layers(X, params, cfg, training, rng)
    coeffs = (binomial_coefficients if coefficients == "canonical" else literal_coefficients)(cfg.L, cfg.gamma)
    Z = polynomial_trunk(X_T, A_tilde, params["W_res"], coeffs)
    return _head(Z, params, cfg, training, rng)


def gpcn_link_forward(X, g: GraphInputs, params, cfg, training=False, rng=None) -> Tensor:
    trunk = gpcn_trunk(X, g.a_tilde, params, cfg, training, rng)
    return _link_mix(trunk, g, params, cfg, training, rng)


def agpcn_trunk(X, A_tilde, params, cfg, training=False, rng=None) -> Tensor:
    X_T = _initial_layers(X, params, cfg, training, rng)
    return polynomial_trunk(X_T, A_tilde, params["W_res"], params["theta"])


def agpcn_forward(X, A_tilde, params, cfg, training=False, rng=None) -> Tensor:
    return _head(agpcn_trunk(X, A_tilde, params, cfg, training, rng), params, cfg, training, rng)


def agpcn_link_forward(X, g: GraphInputs, params, cfg, training=False, rng=None) -> Tensor:
    trunk = agpcn_trunk(X, g.a_tilde, params, cfg, training, rng)
    return _link_mix(trunk, g, params, cfg, training, rng)


def forward(cfg: ModelConfig, params: ParameterSet, g: GraphInputs, training=False, rng=None) -> Tensor:
    """Logits for any model kind."""
    k = cfg.kind
    X = g.X
    if k == ModelKind.MLP:
        return mlp_forward(X, params, cfg, training, rng)
    if k == ModelKind.GCN:
        return gcn_forward(X, g.a_tilde, params, cfg, training, rng)
    if k == ModelKind.SGC:
        return sgc_forward(X, g.a_tilde, params, cfg, training, rng)
    if k == ModelKind.GPRGNN:
        return gprgnn_forward(X, g.a_tilde, params, cfg, training, rng)
    if k == ModelKind.LINK:
        return link_forward(g.a_raw, params)
    if k == ModelKind.LINKX:
        return linkx_forward(g.a_raw, X, params, cfg, training, rng)
    if k == ModelKind.GPCN:
        return gpcn_forward_recursive(X, g.a_tilde, params, cfg, training, rng)
    if k == ModelKind.GPCN_LINK:
        return gpcn_link_forward(X, g, params, cfg, training, rng)
    if k == ModelKind.AGPCN:
        return agpcn_forward(X, g.a_tilde, params, cfg, training, rng)
    return agpcn_link_forward(X, g, params, cfg, training, rng)


def regularization(params: ParameterSet, cfg: ModelConfig, weight_decay: float) -> Tensor | None:
    """Penalty on theta for the adaptive kinds; None otherwise."""
    if not cfg.kind.adaptive:
        return None
    lam = weight_decay if cfg.theta_decay is None else cfg.theta_decay
    return ad.l2_penalty([params["theta"]], lam)


def loss_fn(cfg, params, g, y, mask, weight_decay=0.0, training=False, rng=None) -> Tensor:
    loss = ad.softmax_cross_entropy(forward(cfg, params, g, training, rng), y, mask)
    reg = regularization(params, cfg, weight_decay)
    return loss if reg is None else ad.add(loss, reg)
