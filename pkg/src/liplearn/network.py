"""Full models: unconstrained MLP and the certified-gain LipNet.

LipNet scales the input and output by sqrt(eta) around a chain of
1-Lipschitz layers, so its Lipschitz constant is bounded by
eta = e^psi by construction; the bound is the certificate, with psi a
free (trainable) parameter. The MLP has no certificate, only the
sampled empirical lower bound.
"""

from __future__ import annotations

import json

import numpy as np

from . import autodiff as ad
from . import layers as ly
from .autodiff import Var
from .data import Domain
from .errors import DimensionError, NumericError

Array = np.ndarray

CHECKPOINT_SCHEMA = "liplearn-checkpoint-v1"


def _check_widths(widths):
    widths = [int(w) for w in widths]
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ValueError(f"widths must list input, hidden..., output sizes, got {widths}")
    return widths


class MlpNet:
    """Plain multilayer perceptron: affine + activation blocks, affine head."""

    model = "mlp"

    def __init__(self, widths, act: str = "relu", seed: int = 0, layers=None):
        self.widths = _check_widths(widths)
        self.act = act
        if layers is not None:
            self.layers = layers
        else:
            rng = ad.make_rng(seed)
            self.layers = [ly.AffineLayer(a, b, act, rng)
                           for a, b in zip(self.widths[:-2], self.widths[1:-1])]
            self.layers.append(ly.AffineLayer(self.widths[-2], self.widths[-1],
                                              "identity", rng))

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def output_dim(self) -> int:
        return self.widths[-1]

    def parameters(self) -> list[Var]:
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, x) -> Var:
        h = ly._check_input(x, self.input_dim)
        for layer in self.layers:
            h = layer.forward(h)
        if not np.all(np.isfinite(h.value)):
            raise NumericError("network produced non-finite output")
        return h

    def predict(self, x: Array) -> Array:
        single = np.asarray(x).ndim == 1
        out = self.forward(x).value
        return out[0] if single else out

    def state(self) -> dict:
        return {"schema": CHECKPOINT_SCHEMA, "model": self.model,
                "widths": self.widths, "activation": self.act,
                "layers": [layer.state() for layer in self.layers]}

    @classmethod
    def from_state(cls, s: dict) -> "MlpNet":
        layers = [ly.layer_from_state(t) for t in s["layers"]]
        return cls(s["widths"], s["activation"], layers=layers)


class LipNet:
    """Certified network: y = sqrt(eta) * (1-Lipschitz chain)(sqrt(eta) * x).

    The chain is hidden layers of one certified family plus a linear
    (identity-activation) certified head, so Lip <= eta = e^psi exactly.
    """

    model = "lipnet"

    def __init__(self, widths, layer_kind: str = "sandwich", act: str = "relu",
                 seed: int = 0, psi0: float = 0.0, layers=None):
        self.widths = _check_widths(widths)
        self.layer_kind = layer_kind
        self.act = act
        if layer_kind not in ly.LIPSCHITZ_FAMILIES:
            raise ValueError(f"LipNet needs a certified family, got {layer_kind!r}")
        if layers is not None:
            self.layers = layers
        else:
            rng = ad.make_rng(seed)
            self.layers = [ly.make_layer(layer_kind, a, b, act, rng)
                           for a, b in zip(self.widths[:-2], self.widths[1:-1])]
            self.layers.append(ly.make_layer(layer_kind, self.widths[-2],
                                             self.widths[-1], "identity", rng))
        self.psi = Var(np.asarray(float(psi0)))

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def output_dim(self) -> int:
        return self.widths[-1]

    @property
    def eta(self) -> float:
        return float(np.exp(self.psi.value))

    def parameters(self, include_psi: bool = True) -> list[Var]:
        params = [p for layer in self.layers for p in layer.parameters()]
        if include_psi:
            params.append(self.psi)
        return params

    def forward(self, x) -> Var:
        h = ly._check_input(x, self.input_dim)
        root_eta = ad.exp(ad.scale(self.psi, 0.5))
        h = ad.mul(h, root_eta)
        for layer in self.layers:
            h = layer.forward(h)
        h = ad.mul(h, root_eta)
        if not np.all(np.isfinite(h.value)):
            raise NumericError("network produced non-finite output")
        return h

    def predict(self, x: Array) -> Array:
        single = np.asarray(x).ndim == 1
        out = self.forward(x).value
        return out[0] if single else out

    def state(self) -> dict:
        return {"schema": CHECKPOINT_SCHEMA, "model": self.model,
                "widths": self.widths, "activation": self.act,
                "layer_kind": self.layer_kind, "psi": float(self.psi.value),
                "layers": [layer.state() for layer in self.layers]}

    @classmethod
    def from_state(cls, s: dict) -> "LipNet":
        layers = [ly.layer_from_state(t) for t in s["layers"]]
        net = cls(s["widths"], s["layer_kind"], s["activation"],
                  psi0=s["psi"], layers=layers)
        return net


def certified_lipschitz(net) -> float | None:
    """eta for a LipNet; None for an MLP (no architecture certificate)."""
    if isinstance(net, LipNet):
        return net.eta
    return None


def net_from_state(s: dict):
    if s.get("schema") != CHECKPOINT_SCHEMA:
        raise ValueError(f"unsupported checkpoint schema {s.get('schema')!r}")
    if s["model"] == "lipnet":
        return LipNet.from_state(s)
    if s["model"] == "mlp":
        return MlpNet.from_state(s)
    raise ValueError(f"unknown model kind {s['model']!r}")


def save_checkpoint(net, path) -> None:
    with open(path, "w") as fh:
        json.dump(net.state(), fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    with open(path) as fh:
        return net_from_state(json.load(fh))


def describe(net) -> dict:
    """Architecture, certificate and parameter count (the `info` payload)."""
    cert = certified_lipschitz(net)
    return {
        "model": net.model,
        "widths": net.widths,
        "activation": net.act,
        "layer_kind": getattr(net, "layer_kind", "affine"),
        "certified_lipschitz": cert,
        "parameter_count": int(sum(p.value.size for p in net.parameters())),
    }


def empirical_lipschitz_net(net, domain: Domain, pairs: int = 10_000,
                            refine_steps: int = 20, seed: int = 0) -> float:
    """Sampled lower bound on Lip(net) with local pair refinement.

    Draws point pairs in the domain, then repeatedly bisects each pair
    toward the half with the larger difference quotient; every quotient
    evaluated along the way is a valid lower bound, and the max is
    returned. Pure pair sampling badly underestimates smooth networks;
    the bisection acts as a finite-difference probe of the local slope.
    """
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    if net.input_dim != domain.dim:
        raise DimensionError(f"network expects dimension {net.input_dim}, "
                             f"domain has {domain.dim}")
    rng = ad.make_rng(seed)
    span = domain.upper - domain.lower
    a = domain.lower + rng.random((pairs, domain.dim)) * span
    b = domain.lower + rng.random((pairs, domain.dim)) * span
    # Collapse exact duplicates (measure zero) by nudging toward a corner.
    same = np.all(a == b, axis=1)
    if np.any(same):
        b[same] = domain.lower + 0.5 * (b[same] - domain.lower)

    floor = 1e-9 * float(np.linalg.norm(span))

    def quotient(p: Array, q: Array) -> Array:
        num = np.linalg.norm(net.predict(p) - net.predict(q), axis=1)
        den = np.linalg.norm(p - q, axis=1)
        return np.where(den > floor, num / np.maximum(den, floor), 0.0)

    best = float(np.max(quotient(a, b)))
    for _ in range(int(refine_steps)):
        mid = 0.5 * (a + b)
        qa = quotient(a, mid)
        qb = quotient(mid, b)
        take_left = qa >= qb
        b = np.where(take_left[:, None], mid, b)
        a = np.where(take_left[:, None], a, mid)
        best = max(best, float(np.max(qa)), float(np.max(qb)))
    return best
