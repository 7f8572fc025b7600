"""Training losses: tempered-softmax cross-entropy over all classifier heads,
prediction-level KL consistency, and embedding-level JSD + adversarial
consistency, combined into the total objective.

All functions are torch-autograd friendly and accept numpy arrays or tensors
(numpy input is promoted to float64 tensors). Conventions:

* softmax temperature divides the logits, so tau > 1 flattens and tau < 1
  sharpens the distribution;
* the KL consistency stops gradients through the source (teacher) side;
* the adversarial terms inside the embedding loss are the discriminators'
  log-likelihood of correct discrimination, so minimizing them w.r.t. the
  feature extractor inverts the sign of the discriminator's own objective
  (the extractor fools the bank); the bank itself is trained by the separate
  cross-entropy returned as ``disc_loss``.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    tau: float = 0.1
    eta: float = 0.1
    mu: float = 0.05
    delta: float = 0.1

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if min(self.eta, self.mu, self.delta) < 0:
            raise ValueError("eta, mu, delta must be >= 0")


def _tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(x, dtype=torch.float64)


def tempered_softmax(logits, tau: float) -> torch.Tensor:
    """Softmax of logits / tau, computed with max subtraction."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    z = _tensor(logits) / tau
    return F.softmax(z, dim=-1)


def kl_divergence(p, q) -> torch.Tensor:
    """KL(p || q) with natural log, 0*log(0) = 0, q floored at 1e-12."""
    p = _tensor(p)
    q = _tensor(q)
    if p.shape != q.shape:
        raise ValueError("probability vectors must have the same shape")
    terms = torch.xlogy(p, p) - torch.xlogy(p, q.clamp(min=PROB_FLOOR))
    return terms.sum(dim=-1)


def js_divergence(p, q) -> torch.Tensor:
    """Jensen-Shannon divergence, natural log (bounded by ln 2)."""
    p = _tensor(p)
    q = _tensor(q)
    if p.shape != q.shape:
        raise ValueError("probability vectors must have the same shape")
    m = 0.5 * (p + q)
    return 0.5 * kl_divergence(p, m) + 0.5 * kl_divergence(q, m)


def loss_cls(outputs, label, w: LossWeights) -> torch.Tensor:
    """Tempered-softmax cross-entropy summed over every classifier head."""
    y = torch.as_tensor(label, dtype=torch.long)
    if y.ndim == 0:
        y = y[None]
    total = None
    for logits in outputs.heads:
        term = F.cross_entropy(_tensor(logits) / w.tau, y, reduction="mean")
        total = term if total is None else total + term
    return total


def loss_label(outputs_s, outputs_t, w: LossWeights) -> torch.Tensor:
    """Prediction-level consistency: KL(softened source || softened target),
    summed over heads, batch-averaged; the source side is treated as a fixed
    teacher (stop-gradient)."""
    heads_s = outputs_s.heads
    heads_t = outputs_t.heads
    if len(heads_s) != len(heads_t):
        raise ValueError("source/target outputs have different head counts")
    total = None
    for zs, zt in zip(heads_s, heads_t):
        zs = _tensor(zs)
        zt = _tensor(zt)
        if zs.shape != zt.shape:
            raise ValueError("source/target pairing mismatch (batch shapes differ)")
        log_ps = F.log_softmax(zs / w.tau, dim=-1).detach()
        log_pt = F.log_softmax(zt / w.tau, dim=-1)
        kl = (log_ps.exp() * (log_ps - log_pt)).sum(dim=-1).mean()
        total = kl if total is None else total + kl
    return total


def loss_emb(feats_s, feats_t, bank, w: LossWeights, indices=None):
    """Embedding-level consistency.

    Returns ``(feature_loss, disc_loss)``:

    * ``feature_loss`` faces the extractor: per level, JSD between the
      softmax-normalized features plus eta times the discriminator's
      log-likelihood of correct discrimination (whose minimization fools it);
    * ``disc_loss`` is the bank's own two-class CE on detached features
      (source = 1, target = 0).

    ``indices`` selects which discriminators the features belong to; by
    default the lists cover the whole bank.
    """
    if indices is None:
        indices = range(bank.levels)
    indices = list(indices)
    if len(feats_s) != len(feats_t) or len(feats_s) != len(indices):
        raise ValueError("feature list length must match the discriminator indices")
    feature_loss = None
    disc_loss = None
    for i, fs, ft in zip(indices, feats_s, feats_t):
        fs = _tensor(fs)
        ft = _tensor(ft)
        if fs.shape != ft.shape:
            raise ValueError("source/target feature shapes differ")
        jsd = js_divergence(F.softmax(fs, dim=-1), F.softmax(ft, dim=-1)).mean()

        ps = bank.prob(i, fs)
        pt = bank.prob(i, ft)
        adv = w.eta * (torch.log(ps).mean() + torch.log(1.0 - pt).mean())
        term = jsd + adv
        feature_loss = term if feature_loss is None else feature_loss + term

        ps_d = bank.prob(i, fs.detach())
        pt_d = bank.prob(i, ft.detach())
        ce = -(torch.log(ps_d).mean() + torch.log(1.0 - pt_d).mean())
        disc_loss = ce if disc_loss is None else disc_loss + ce
    return feature_loss, disc_loss


def loss_total(cls, label_c, emb_c, w: LossWeights) -> torch.Tensor:
    """Overall objective: L_cls + mu * L_label + delta * L_emb(feature part)."""
    parts = {"l_cls": _tensor(cls), "l_label": _tensor(label_c), "l_emb": _tensor(emb_c)}
    for name, value in parts.items():
        if not torch.isfinite(value).all():
            raise FloatingPointError(f"non-finite loss term {name}: {value}")
    return parts["l_cls"] + w.mu * parts["l_label"] + w.delta * parts["l_emb"]
