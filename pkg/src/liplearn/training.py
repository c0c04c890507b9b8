"""Trainers: P1/P2 augmented Lagrangian, P3 supervised, MLP baseline.

P1 minimizes max(eta, L_data) under exact-interpolation equality
constraints; P2 minimizes nothing under the same equalities plus the
cap eta <= L_data + rho; P3 freezes eta = L_data + rho and minimizes
the mean squared error. P1/P2 run an outer loop over the augmented
Lagrangian

    L_A = objective + sum_i lambda_i^T c_i + (mu/2) sum_i ||c_i||^2,
    c_i = f(x_i) - y_i,

with dual updates lambda_i += mu c_i and a penalty weight that grows
whenever the max constraint violation fails to drop. Everything is
full batch, so identical seeds give bit-identical reports.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .data import LabeledDataset, empirical_lipschitz_lower
from .errors import DivergenceError
from .network import LipNet, MlpNet, certified_lipschitz, empirical_lipschitz_net

Array = np.ndarray

FORMULATIONS = ("P1", "P2", "P3")


@dataclass(frozen=True)
class Formulation:
    kind: str
    rho: float = 0.0

    def __post_init__(self):
        if self.kind not in FORMULATIONS:
            raise ValueError(f"formulation must be one of {FORMULATIONS}, got {self.kind!r}")
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")


@dataclass
class TrainConfig:
    outer_iters: int = 12
    inner_steps: int = 2000
    lr: float = 1e-3
    mu0: float = 1.0
    mu_growth: float = 10.0
    violation_factor: float = 0.25
    tol_c: float = 1e-4
    seed: int = 0
    weight_decay: float = 0.0

    def __post_init__(self):
        if min(self.outer_iters, self.inner_steps) < 1:
            raise ValueError("iteration counts must be positive")
        if min(self.lr, self.mu0, self.tol_c) <= 0 or self.mu_growth < 1:
            raise ValueError("lr, mu0, tol_c must be positive and mu_growth >= 1")
        if not (0 < self.violation_factor < 1):
            raise ValueError("violation_factor must be in (0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class AugLagState:
    lam: Array           # one multiplier vector per equality constraint
    mu: float
    slack: float = 0.0   # multiplier of the P2 inequality
    history: list = field(default_factory=list)  # max violation per outer round


@dataclass
class TrainingReport:
    status: str
    formulation: str
    rho: float
    l_data: float
    eta: float | None
    certified: float | None
    train_mse: float
    train_max: float
    outer_iters_run: int
    inner_steps: int
    violation_history: list
    mu_final: float
    seed: int
    weight_decay: float = 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "TrainingReport":
        with open(path) as fh:
            return cls(**json.load(fh))


class Adam:
    """Per-parameter first-order method with momentum and second-moment scaling."""

    def __init__(self, params, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = ad.grad_of(p)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value = p.value - lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def cosine_lr(base: float, step: int, total: int) -> float:
    return 0.5 * base * (1.0 + math.cos(math.pi * step / max(1, total)))


def mse_loss(net, x: Array, y: Array) -> Var:
    pred = net.forward(x)
    return ad.scale(ad.sum_all(ad.square(ad.sub(pred, y))), 1.0 / x.shape[0])


def weight_penalty(net) -> Var:
    total = None
    for p in net.parameters():
        term = ad.sum_all(ad.square(p))
        total = term if total is None else ad.add(total, term)
    return total


def augmented_lagrangian(net: LipNet, x: Array, y: Array, form: Formulation,
                         state: AugLagState, l_data: float) -> Var:
    """L_A(theta, lambda, mu) for P1/P2 at the current multipliers."""
    pred = net.forward(x)
    c = ad.sub(pred, y)
    loss = ad.add(ad.sum_all(ad.mul(state.lam, c)),
                  ad.scale(ad.sum_all(ad.square(c)), 0.5 * state.mu))
    if form.kind == "P1":
        eta = ad.exp(net.psi)
        loss = ad.add(loss, ad.max_with_const(eta, l_data))
    elif form.kind == "P2":
        # Squared-hinge treatment of eta - L_data - rho <= 0 with its own
        # multiplier: (1/2mu) (max(0, slack + mu g)^2 - slack^2).
        g = ad.sub(ad.exp(net.psi), l_data + form.rho)
        hinge = ad.max_with_const(ad.add(ad.scale(g, state.mu), state.slack), 0.0)
        loss = ad.add(loss, ad.scale(ad.sub(ad.square(hinge), state.slack ** 2),
                                     0.5 / state.mu))
    else:
        raise ValueError("augmented Lagrangian applies to P1/P2 only")
    return loss


def _train_summary(net, x: Array, y: Array) -> tuple[float, float]:
    err = net.predict(x) - y
    sq = np.sum(err ** 2, axis=1)
    return float(np.mean(sq)), float(np.sqrt(np.max(sq)))


def _run_adam(net, params, loss_fn, steps: int, lr: float, guard_state,
              project=None) -> None:
    """Inner minimization; raises DivergenceError on NaN/Inf loss."""
    opt = Adam(params)
    for t in range(steps):
        ad.clear_grads(params)
        loss = loss_fn()
        if not np.isfinite(loss.value):
            raise DivergenceError("training loss became non-finite",
                                  checkpoint=guard_state)
        ad.backward(loss)
        opt.step(cosine_lr(lr, t, steps))
        if project is not None:
            project()


def _last3_nonincreasing(history) -> bool:
    tail = history[-3:]
    return all(a >= b - 1e-15 for a, b in zip(tail, tail[1:]))


def train(net, ds: LabeledDataset, form: Formulation, cfg: TrainConfig):
    """Train one formulation; returns (net, TrainingReport).

    Non-convergence of P1/P2 within the outer budget is a report status,
    not an exception: exact interpolation is only reached asymptotically.
    """
    if net.input_dim != ds.input_dim or net.output_dim != ds.output_dim:
        raise ValueError(f"network ({net.input_dim}->{net.output_dim}) does not match "
                         f"dataset ({ds.input_dim}->{ds.output_dim})")
    l_data = empirical_lipschitz_lower(ds)
    x, y = ds.inputs, ds.outputs

    if form.kind == "P3":
        if not isinstance(net, LipNet):
            raise ValueError("P3 trains a LipNet with frozen gain")
        net.psi.value = np.asarray(math.log(max(form.rho + l_data, 1e-12)))
        params = net.parameters(include_psi=False)
        total = cfg.outer_iters * cfg.inner_steps
        snapshot = net.state()
        _run_adam(net, params, lambda: mse_loss(net, x, y), total, cfg.lr, snapshot)
        train_mse, train_max = _train_summary(net, x, y)
        report = TrainingReport(
            status="converged", formulation="P3", rho=form.rho, l_data=l_data,
            eta=net.eta, certified=certified_lipschitz(net),
            train_mse=train_mse, train_max=train_max,
            outer_iters_run=cfg.outer_iters, inner_steps=cfg.inner_steps,
            violation_history=[], mu_final=0.0, seed=cfg.seed)
        return net, report

    if not isinstance(net, LipNet):
        raise ValueError(f"{form.kind} requires a LipNet (it optimizes the certificate)")

    net.psi.value = np.asarray(math.log(max(l_data, 1e-12)) + 0.5)
    # Interpolation forces Lip(f) >= L_data, so eta below L_data is provably
    # infeasible and the P1 objective is flat there; project psi onto the
    # usable box instead of letting the optimizer wander into it. For P2 the
    # cap is the inequality constraint itself, kept exactly feasible.
    floor = math.log(max(l_data, 1e-12))
    cap = math.log(max(l_data + form.rho, 1e-12)) if form.kind == "P2" else math.inf
    net.psi.value = np.asarray(min(max(float(net.psi.value), floor), cap))

    def project():
        net.psi.value = np.asarray(min(max(float(net.psi.value), floor), cap))

    state = AugLagState(lam=np.zeros_like(y), mu=cfg.mu0)
    params = net.parameters(include_psi=True)
    outer_done = 0
    for outer in range(cfg.outer_iters):
        snapshot = net.state()
        _run_adam(net, params,
                  lambda: augmented_lagrangian(net, x, y, form, state, l_data),
                  cfg.inner_steps, cfg.lr, snapshot, project=project)
        c = net.predict(x) - y
        viol = float(np.max(np.linalg.norm(c, axis=1)))
        state.lam = state.lam + state.mu * c
        if form.kind == "P2":
            g = net.eta - (l_data + form.rho)
            state.slack = max(0.0, state.slack + state.mu * g)
        outer_done = outer + 1
        prev = state.history[-1] if state.history else None
        state.history.append(viol)
        if viol <= cfg.tol_c:
            break
        if prev is not None and viol > cfg.violation_factor * prev:
            state.mu *= cfg.mu_growth

    train_mse, train_max = _train_summary(net, x, y)
    final_viol = state.history[-1]
    converged = final_viol <= cfg.tol_c and _last3_nonincreasing(state.history)
    if form.kind == "P1":
        # The objective max(eta, L_data) never rewards eta below L_data.
        assert net.eta >= l_data - cfg.tol_c - 1e-9, \
            f"P1 returned eta={net.eta} below L_data={l_data}"
    report = TrainingReport(
        status="converged" if converged else "non-converged",
        formulation=form.kind, rho=form.rho, l_data=l_data,
        eta=net.eta, certified=certified_lipschitz(net),
        train_mse=train_mse, train_max=train_max,
        outer_iters_run=outer_done, inner_steps=cfg.inner_steps,
        violation_history=[float(v) for v in state.history],
        mu_final=state.mu, seed=cfg.seed)
    return net, report


def train_mlp_baseline(net: MlpNet, ds: LabeledDataset, weight_decay: float,
                       cfg: TrainConfig):
    """Supervised MLP baseline: MSE + weight_decay * ||theta||^2."""
    if weight_decay < 0:
        raise ValueError("weight_decay must be nonnegative")
    if net.input_dim != ds.input_dim or net.output_dim != ds.output_dim:
        raise ValueError("network/dataset dimension mismatch")
    l_data = empirical_lipschitz_lower(ds) if ds.size >= 2 else 0.0
    x, y = ds.inputs, ds.outputs
    params = net.parameters()

    def loss_fn():
        loss = mse_loss(net, x, y)
        if weight_decay > 0:
            loss = ad.add(loss, ad.scale(weight_penalty(net), weight_decay))
        return loss

    total = cfg.outer_iters * cfg.inner_steps
    _run_adam(net, params, loss_fn, total, cfg.lr, net.state())
    train_mse, train_max = _train_summary(net, x, y)
    report = TrainingReport(
        status="converged", formulation="MLP", rho=0.0, l_data=l_data,
        eta=None, certified=None, train_mse=train_mse, train_max=train_max,
        outer_iters_run=cfg.outer_iters, inner_steps=cfg.inner_steps,
        violation_history=[], mu_final=0.0, seed=cfg.seed,
        weight_decay=weight_decay)
    return net, report


@dataclass
class MetricsReport:
    """The six evaluation columns: train/test MSE and Max, both Lipschitz bounds."""

    model: str
    rho: float | None
    train_mse: float
    train_max: float
    test_mse: float
    test_max: float
    emp_lip: float
    cert_lip: float | None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")


def evaluate_metrics(net, train_ds: LabeledDataset, test_ds: LabeledDataset,
                     pairs: int = 10_000, refine_steps: int = 20, seed: int = 0,
                     rho: float | None = None, label: str | None = None) -> MetricsReport:
    def split_stats(ds):
        err = net.predict(ds.inputs) - ds.outputs
        sq = np.sum(err ** 2, axis=1)
        return float(np.mean(sq)), float(np.sqrt(np.max(sq)))

    train_mse, train_max = split_stats(train_ds)
    test_mse, test_max = split_stats(test_ds)
    emp = empirical_lipschitz_net(net, train_ds.domain, pairs=pairs,
                                  refine_steps=refine_steps, seed=seed)
    return MetricsReport(
        model=label or net.model, rho=rho,
        train_mse=train_mse, train_max=train_max,
        test_mse=test_mse, test_max=test_max,
        emp_lip=emp, cert_lip=certified_lipschitz(net))
