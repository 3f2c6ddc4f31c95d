"""The four victim-training objectives: benign utility, gradient isolation,
information gain, and adversary induction.

All of them are differentiable w.r.t. the victim's parameters; the isolation
and induction terms route through a gradient of the (fixed) surrogate clone,
which is where the double-backward support of the autodiff core is needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .autodiff import Tensor
from .functional import cosine_similarity, kl_divergence, norm, NORM_EPSILON
from .nets import Classifier
from .params import ParamVector, grad

#: added under the sqrt of the induction gradient norm so the loss stays
#: differentiable when the inner gradient vanishes (contributes <= 1e-12)
NORM_GUARD = 1e-24


@dataclass(frozen=True)
class LossCoefficients:
    """Trade-off weights: gamma1 on isolation, gamma2 on induction, beta on
    the inner gradient-norm term of the induction loss."""
    gamma1: float = 0.0
    gamma2: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        for name in ("gamma1", "gamma2", "beta"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class LossBundle:
    l_ben: float
    l_iso: float
    l_ig: float
    l_ind: float
    total: float
    grads: dict[str, ParamVector] = field(default_factory=dict)


def _as_weight_tensor(weights) -> Tensor:
    t = weights if isinstance(weights, Tensor) else Tensor(np.asarray(weights, dtype=np.float64))
    if np.any(t.data < 0):
        raise ValueError("weights must be non-negative")
    return t


def weighted_logprob_grad(clone: Classifier, x, weights) -> ParamVector:
    """grad_{theta_C} sum_b sum_i w_bi * log C(x_b)_i  (the vector w^T G).

    When ``weights`` carries a differentiation record (e.g. victim outputs),
    the returned gradient stays differentiable w.r.t. those weights.
    """
    w = _as_weight_tensor(weights)
    logp = clone.log_proba(x)
    if w.data.shape != logp.data.shape:
        raise ValueError(
            f"weights shape {w.data.shape} != log-prob shape {logp.data.shape}")
    s = (w * logp).sum()
    return grad(s, clone.params, create_higher_order=w.requires_grad)


def weighted_logprob_grad_materialized(clone: Classifier, x, weights) -> np.ndarray:
    """Fallback oracle for w^T G: materialize the full K-row Jacobian with one
    backward pass per class, then left-multiply by the weights."""
    w = _as_weight_tensor(weights).data
    n_classes = clone.n_classes
    result = np.zeros(clone.params.size)
    for k in range(n_classes):
        logp = clone.log_proba(x)
        col = np.zeros_like(w)
        col[:, k] = w[:, k]
        s = (Tensor(col) * logp).sum()
        result += grad(s, clone.params).flatten()
    return result


def isolation_loss(victim: Classifier, clone: Classifier, x, y_true) -> Tensor:
    """Cosine similarity between the clone-parameter gradient induced by the
    victim's soft outputs and the one induced by ground truth.

    Differentiable w.r.t. the victim's parameters through its outputs only.
    Minimizing it steers the adversary's update direction away from the
    useful one.
    """
    y = y_true if isinstance(y_true, Tensor) else Tensor(np.asarray(y_true, dtype=np.float64))
    y_victim = victim.predict_proba(x, track=True)
    g_victim = weighted_logprob_grad(clone, x, y_victim)
    g_truth = weighted_logprob_grad(clone, x, y)
    n_victim = float(np.linalg.norm(g_victim.flatten()))
    n_truth = float(np.linalg.norm(g_truth.flatten()))
    if n_victim < NORM_EPSILON:
        raise ValueError("isolation_loss: victim-output-side gradient collapsed")
    if n_truth < NORM_EPSILON:
        raise ValueError("isolation_loss: ground-truth-side gradient collapsed")
    return cosine_similarity(g_victim, g_truth)


def information_gain(clone: Classifier, victim: Classifier, x_ood,
                     direction: str = "clone_to_victim") -> Tensor:
    """KL between clone and victim output probabilities on a query batch,
    averaged over the batch; differentiable w.r.t. both models.

    ``direction='clone_to_victim'`` is KL(C || V); the reverse is available
    behind the flag for the distillation convention.
    """
    p_clone = clone.predict_proba(x_ood, track=True)
    p_victim = victim.predict_proba(x_ood, track=True)
    if direction == "clone_to_victim":
        return kl_divergence(p_clone, p_victim)
    if direction == "victim_to_clone":
        return kl_divergence(p_victim, p_clone)
    raise ValueError(f"unknown KL direction {direction!r}")


def induction_terms(clone: Classifier, victim: Classifier, x_ood,
                    direction: str = "clone_to_victim") -> tuple[Tensor, Tensor]:
    """(information gain, L2 norm of its clone-parameter gradient); both
    differentiable w.r.t. the victim's parameters."""
    l_ig = information_gain(clone, victim, x_ood, direction=direction)
    inner = grad(l_ig, clone.params, create_higher_order=True)
    return l_ig, norm(inner, guard=NORM_GUARD)


def induction_loss(clone: Classifier, victim: Classifier, x_ood, beta: float,
                   direction: str = "clone_to_victim") -> Tensor:
    """Information gain plus beta times the norm of its clone gradient."""
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    l_ig, grad_norm = induction_terms(clone, victim, x_ood, direction=direction)
    if beta == 0:
        return l_ig
    return l_ig + Tensor(float(beta)) * grad_norm


def total_loss(victim: Classifier, clone: Classifier, x_id, y_id, x_ood,
               coefficients: LossCoefficients,
               direction: str = "clone_to_victim",
               with_grads: bool = True) -> LossBundle:
    """All four scalars of the combined objective plus per-loss victim
    gradients. total = L_ben + gamma1 * L_iso + gamma2 * L_ind."""
    from .functional import softmax_cross_entropy

    y = y_id if isinstance(y_id, Tensor) else Tensor(np.asarray(y_id, dtype=np.float64))
    l_ben_t = softmax_cross_entropy(victim.logits(x_id), y)
    l_iso_t = isolation_loss(victim, clone, x_id, y)
    l_ig_t, grad_norm_t = induction_terms(clone, victim, x_ood, direction=direction)
    l_ind = float(l_ig_t.data) + coefficients.beta * float(grad_norm_t.data)
    total = (float(l_ben_t.data) + coefficients.gamma1 * float(l_iso_t.data)
             + coefficients.gamma2 * l_ind)
    bundle = LossBundle(
        l_ben=float(l_ben_t.data), l_iso=float(l_iso_t.data),
        l_ig=float(l_ig_t.data), l_ind=l_ind, total=total)
    if with_grads:
        bundle.grads = {
            "ben": grad(l_ben_t, victim.params),
            "iso": grad(l_iso_t, victim.params),
            "ig": grad(l_ig_t, victim.params),
            "ig_grad_norm": grad(grad_norm_t, victim.params),
        }
    return bundle
