"""Ungerboeck-graph GNN detector and the QRM/GNN outer loop (QRMNet).

The graph has one variable node per real coordinate (``N = 2 n_t``) and a
factor node for every ordered pair ``k != n``. Node inputs are
``b_n = [c_n, G_nn, sigma_z2]``, edge inputs ``f_kn = [G_kn, sigma_z2]`` and
the prior feature ``a_n`` (QRM or EP moments, or the full categorical).

Shapes: node arrays ``(B, N, d)``, edge arrays ``(B, N, N, d)`` indexed
``[b, k, n]`` for the message from ``k`` into ``n``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .baselines import ep_detect
from .detect_qrm import (
    POSTERIOR_FLOOR,
    DetectionContext,
    posterior_moments,
    qrm_detect,
)
from .neural import (
    AdamState,
    Dense,
    GRUCell,
    ModelParams,
    ReLU,
    Sequential,
    adam_step,
    diagnostics,
    cross_entropy,
    cross_entropy_backward,
    softmax,
    softmax_backward,
    zeros_like_params,
)

__all__ = [
    "GnnConfig",
    "GnnNet",
    "EpInput",
    "node_features",
    "edge_features",
    "prior_features",
    "qrmnet_detect",
    "qrmnet_loss_and_grad",
    "prior_feature_trace",
    "DetTrainHyper",
    "qrmnet_train",
    "symbol_error_rate",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GnnConfig:
    n_u: int = 8
    n_h1: int = 64
    n_h2: int = 32
    n_h3: int = 64
    n_pam: int = 4
    prior_feature: str = "moments"  # or "distribution"

    @property
    def prior_width(self) -> int:
        if self.prior_feature == "moments":
            return 2
        if self.prior_feature == "distribution":
            return self.n_pam
        raise ValueError(f"unknown prior_feature {self.prior_feature!r}")


@dataclass
class EpInput:
    """Raw complex system needed when EP, not QRM, supplies the priors."""

    y: np.ndarray
    H: np.ndarray
    sigma_w2: np.ndarray
    order: int
    iterations: int = 10
    damping: float = 0.9


def node_features(ctx: DetectionContext):
    diag = np.diagonal(ctx.G, axis1=1, axis2=2)
    s = np.broadcast_to(ctx.sigma_z2[:, None], diag.shape)
    return np.stack([ctx.c, diag, s], axis=-1)


def edge_features(ctx: DetectionContext):
    s = np.broadcast_to(ctx.sigma_z2[:, None, None], ctx.G.shape)
    return np.stack([ctx.G, s], axis=-1)


def prior_features(posterior, alphabet, mode: str = "moments"):
    if mode == "distribution":
        return np.asarray(posterior, dtype=float)
    mean, var = posterior_moments(posterior, alphabet)
    return np.stack([mean, var], axis=-1)


class GnnNet:
    """Layer layout of the GNN; parameters live in a ``ModelParams``."""

    def __init__(self, cfg: GnnConfig):
        self.cfg = cfg
        c = cfg
        self.vn1 = Sequential([Dense("vn1.0", 3, c.n_h2), ReLU(), Dense("vn1.1", c.n_h2, c.n_h3),
                               ReLU(), Dense("vn1.2", c.n_h3, c.n_u)])
        self.vn2 = Sequential([Dense("vn2.0", c.n_h1, c.n_h2), ReLU(), Dense("vn2.1", c.n_h2, c.n_h3),
                               ReLU(), Dense("vn2.2", c.n_h3, c.n_u)])
        self.fn = Sequential([Dense("fn.0", 2 * c.n_u + 2, c.n_h1), ReLU(),
                              Dense("fn.1", c.n_h1, c.n_h2), ReLU(), Dense("fn.2", c.n_h2, c.n_u)])
        self.gru = GRUCell("gru", c.n_u + c.prior_width, c.n_h1)
        self.readout = Sequential([Dense("gnn.0", c.n_u, c.n_h1), ReLU(), Dense("gnn.1", c.n_h1, c.n_h2),
                                   ReLU(), Dense("gnn.2", c.n_h2, c.n_pam)])

    def init(self, rng) -> ModelParams:
        P = ModelParams()
        for part in (self.vn1, self.vn2, self.fn, self.readout):
            P.update(part.init(rng))
        P.update(self.gru.init(rng))
        # zero final readout layer: uniform posteriors before training
        P["gnn.2.W"][:] = 0.0
        return P

    @classmethod
    def from_params(cls, P, prior_feature: str | None = None) -> "GnnNet":
        n_u = P["vn1.2.W"].shape[1]
        n_pam = P["gnn.2.W"].shape[1]
        width = P["gru.Wx"].shape[0] - n_u
        if prior_feature is None:
            # ambiguous only for 2-PAM, where both modes are 2 wide
            prior_feature = "moments" if width == 2 else "distribution"
        return cls(GnnConfig(
            n_u=n_u, n_h1=P["gru.Wh"].shape[0], n_h2=P["vn2.0.W"].shape[1],
            n_h3=P["vn2.1.W"].shape[1], n_pam=n_pam, prior_feature=prior_feature,
        ))

    # ------------------------------------------------------------ pieces

    def init_nodes(self, P, b):
        return self.vn1.forward(P, b)

    def fn_update(self, P, u, f):
        """All ordered-pair messages; diagonal (k == n) entries are zeroed."""
        B, N, n_u = u.shape
        uk = np.broadcast_to(u[:, :, None, :], (B, N, N, n_u))
        un = np.broadcast_to(u[:, None, :, :], (B, N, N, n_u))
        c = np.concatenate([uk, un, f], axis=-1)
        m, cache = self.fn.forward(P, c)
        mask = 1.0 - np.eye(N)
        return m * mask[None, :, :, None], cache

    def vn_update(self, P, m, a, g):
        m_sum = m.sum(axis=1)
        x = np.concatenate([m_sum, a], axis=-1)
        g_new, gru_cache = self.gru.forward(P, x, g)
        u, vn2_cache = self.vn2.forward(P, g_new)
        return g_new, u, (gru_cache, vn2_cache)

    def read(self, P, u):
        logits, cache = self.readout.forward(P, u)
        n = logits.shape[-1]
        q = softmax(logits)
        return POSTERIOR_FLOOR + (1.0 - n * POSTERIOR_FLOOR) * q, (cache, q)

    # ------------------------------------------------------------ one GNN pass

    def run(self, P, b, f, a, L: int, tape: bool = False):
        """``L`` message-passing rounds from fresh node states, then readout."""
        B, N, _ = b.shape
        u, vn1_cache = self.init_nodes(P, b)
        g = np.zeros((B, N, self.cfg.n_h1))
        steps = []
        for _ in range(L):
            m, fn_cache = self.fn_update(P, u, f)
            g, u, vn_cache = self.vn_update(P, m, a, g)
            if tape:
                steps.append((fn_cache, vn_cache))
        p, ro_cache = self.read(P, u)
        return p, ((vn1_cache, steps, ro_cache, N) if tape else None)

    def backward(self, P, tape, dp, G):
        vn1_cache, steps, (ro_cache, q), N = tape
        n = q.shape[-1]
        dlogits = softmax_backward(q, (1.0 - n * POSTERIOR_FLOOR) * dp)
        du = self.readout.backward(P, ro_cache, dlogits, G)
        dg = None
        mask = (1.0 - np.eye(N))[None, :, :, None]
        n_u = self.cfg.n_u
        for fn_cache, (gru_cache, vn2_cache) in reversed(steps):
            dg_out = self.vn2.backward(P, vn2_cache, du, G)
            if dg is not None:
                dg_out = dg_out + dg
            dx, dg = self.gru.backward(P, gru_cache, dg_out, G)
            dm = np.broadcast_to(dx[:, None, :, :n_u], dx.shape[:1] + (N, N, n_u)) * mask
            dc = self.fn.backward(P, fn_cache, dm, G)
            du = dc[..., :n_u].sum(axis=2) + dc[..., n_u:2 * n_u].sum(axis=1)
        self.vn1.backward(P, vn1_cache, du, G)


def _prior_posterior(ctx, priors, K, max_log, ep_input):
    if ep_input is None:
        return qrm_detect(ctx, priors, K=K, max_log=max_log)
    return ep_detect(ep_input.y, ep_input.H, ep_input.sigma_w2, ep_input.order, priors=priors,
                     iterations=ep_input.iterations, damping=ep_input.damping).posterior


def _outer_loop(ctx, params, net, K, T, L, max_log, ep_input, tape, features=None):
    """Run ``T`` outer iterations; returns ``[(p, tape, a), ...]``.

    ``features``, if given, replaces the prior-detector features ``a`` of
    each iteration (used to check gradients with the priors held fixed).
    """
    b = node_features(ctx)
    f = edge_features(ctx)
    priors = None
    outputs = []
    for t in range(T):
        if features is None:
            prior_post = _prior_posterior(ctx, priors, K, max_log, ep_input)
            a = prior_features(prior_post, ctx.alphabet, net.cfg.prior_feature)
        else:
            a = features[t]
        p, tp = net.run(params, b, f, a, L, tape=tape)
        outputs.append((p, tp, a))
        priors = p
    return outputs


def qrmnet_detect(ctx: DetectionContext, params, K: int = 16, T: int = 2, L: int = 10,
                  max_log: bool = False, ep_input: EpInput | None = None,
                  passthrough: bool = False, prior_feature: str | None = None):
    """Iterate prior detector -> GNN -> priors ``T`` times.

    The first prior detector call is prior-free. Each GNN pass starts from
    ``u^(0) = F_VN1(b_n)`` with a zero GRU state. With ``passthrough`` the
    GNN is bypassed and the prior detector's posterior is returned as is
    (for checking the loop plumbing).
    """
    if passthrough:
        priors = None
        post = None
        for _ in range(T):
            post = _prior_posterior(ctx, priors, K, max_log, ep_input)
            priors = post
        return post
    net = GnnNet.from_params(params, prior_feature)
    return _outer_loop(ctx, params, net, K, T, L, max_log, ep_input, tape=False)[-1][0]


def qrmnet_loss_and_grad(ctx, labels, params, K=16, T=2, L=10, max_log=False,
                         ep_input=None, prior_feature=None, need_grad=True, features=None):
    """Cross-entropy summed over outer iterations and nodes, averaged over REs.

    Gradients stop at the prior detector: its outputs enter as constants.
    Returns ``(loss, grads or None, final_posterior)``.
    """
    net = GnnNet.from_params(params, prior_feature)
    outputs = _outer_loop(ctx, params, net, K, T, L, max_log, ep_input, need_grad, features)
    B = ctx.batch
    loss = sum(cross_entropy(p, labels) for p, _, _ in outputs) / B
    if not need_grad:
        return loss, None, outputs[-1][0]
    G = zeros_like_params(params)
    for p, tape, _ in outputs:
        net.backward(params, tape, cross_entropy_backward(p, labels) / B, G)
    return loss, G, outputs[-1][0]


def prior_feature_trace(ctx, params, K=16, T=2, L=10, max_log=False, ep_input=None,
                        prior_feature=None):
    """The prior-detector features ``a`` seen at each outer iteration."""
    net = GnnNet.from_params(params, prior_feature)
    return [a for _, _, a in _outer_loop(ctx, params, net, K, T, L, max_log, ep_input, False)]


def symbol_error_rate(posterior, labels) -> float:
    """Complex-symbol error rate from real-model posteriors and PAM labels."""
    wrong = np.argmax(posterior, axis=-1) != labels
    n_t = wrong.shape[-1] // 2
    return float((wrong[..., :n_t] | wrong[..., n_t:]).mean())


@dataclass
class DetTrainHyper:
    epochs: int = 20
    batch: int = 480
    lr: float = 1e-3
    K: int = 16
    T: int = 2
    L: int = 10
    seed: int = 0
    prior_feature: str = "moments"
    n_u: int = 8
    n_h1: int = 64
    n_h2: int = 32
    n_h3: int = 64


def qrmnet_train(ctx: DetectionContext, labels, hyper: DetTrainHyper, val=None,
                 ep_input: EpInput | None = None, params=None):
    """Minibatch Adam on the unrolled QRMNet loss.

    ``ctx``/``labels`` hold all training REs; ``val`` is an optional
    ``(ctx, labels)`` pair scored each epoch. Returns ``(params, history)``
    with one ``(epoch, train_loss, val_ser)`` row per epoch.
    """
    from .chanest import DivergenceError

    rng = np.random.default_rng(hyper.seed)
    cfg = GnnConfig(hyper.n_u, hyper.n_h1, hyper.n_h2, hyper.n_h3, len(ctx.alphabet),
                    hyper.prior_feature)
    net = GnnNet(cfg)
    P = params.copy() if params is not None else net.init(rng)
    state = AdamState(lr=hyper.lr)
    labels = np.asarray(labels)
    n = ctx.batch
    history = []
    for epoch in range(1, hyper.epochs + 1):
        perm = rng.permutation(n)
        losses = []
        skipped = diagnostics["adam_skipped"]
        for lo in range(0, n, hyper.batch):
            sel = np.sort(perm[lo:lo + hyper.batch])
            ep = None if ep_input is None else _take_ep(ep_input, sel)
            loss, G, _ = qrmnet_loss_and_grad(ctx.take(sel), labels[sel], P, hyper.K, hyper.T,
                                              hyper.L, ep_input=ep,
                                              prior_feature=hyper.prior_feature)
            if not np.isfinite(loss):
                raise DivergenceError(epoch, hyper.lr, loss)
            adam_step(P, G, state)
            losses.append(loss)
        if diagnostics["adam_skipped"] - skipped == len(losses):
            # no step could be taken: gradients overflowed everywhere
            raise DivergenceError(epoch, hyper.lr, float(np.mean(losses)))
        val_ser = float("nan")
        if val is not None:
            vctx, vlab, vep = val if len(val) == 3 else (*val, None)
            post = qrmnet_detect(vctx, P, hyper.K, hyper.T, hyper.L, ep_input=vep,
                                 prior_feature=hyper.prior_feature)
            val_ser = symbol_error_rate(post, vlab)
        history.append((epoch, float(np.mean(losses)), val_ser))
        log.info("qrmnet epoch %d loss %.4f val_ser %.4g", epoch, history[-1][1], val_ser)
    return P, history


def _take_ep(ep: EpInput, sel) -> EpInput:
    s2 = np.broadcast_to(np.asarray(ep.sigma_w2, dtype=float), (len(ep.y),))
    return EpInput(ep.y[sel], ep.H[sel], s2[sel], ep.order, ep.iterations, ep.damping)
