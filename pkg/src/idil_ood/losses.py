"""Inter-document intra-label ranking loss and its ablation variants.

For each label, documents annotated with that label must score higher on it
than documents annotated otherwise.  A pair term is SiLU(minuend - subtrahend)
with the minuend taken from the document *not* carrying the label; the main
variant detaches the subtrahend so gradients flow only through the minuend.
"""

from __future__ import annotations

from enum import Enum

from . import autodiff as ad
from .autodiff import Tensor


class LossVariant(str, Enum):
    IDIL = "idil"
    IDIL_GRAD_SUB = "idil-gradsub"
    IDIL_GRAD_BOTH = "idil-gradboth"
    IDIL_INTRA_DOC = "idil-intradoc"
    IDIL_NO_SILU = "idil-nosilu"
    CE = "ce"

    @classmethod
    def parse(cls, key: str) -> "LossVariant":
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(v.value for v in cls)
            raise ValueError(f"unknown loss variant {key!r} (expected one of: {valid})")


def bucket_batch(labels: list[int]) -> dict[int, list[int]]:
    """Partition in-batch positions by annotated label, preserving batch order."""
    buckets: dict[int, list[int]] = {}
    for pos, lab in enumerate(labels):
        buckets.setdefault(lab, []).append(pos)
    return buckets


def count_pair_terms(labels: list[int]) -> int:
    """Number of cross-bucket pair terms: sum over labels of |b_l| * |b_not_l|."""
    buckets = bucket_batch(labels)
    n = len(labels)
    return sum(len(members) * (n - len(members)) for members in buckets.values())


def idil_pair_loss(p_minuend: Tensor, p_subtrahend: Tensor, variant: LossVariant) -> Tensor:
    """One pair term.  Value is identical across IDIL / GradSub / GradBoth;
    only the gradient routing differs."""
    if variant is LossVariant.CE:
        raise ValueError("cross-entropy has no pair form")
    if variant is LossVariant.IDIL_GRAD_SUB:
        diff = ad.sub(ad.detach(p_minuend), p_subtrahend)
    elif variant is LossVariant.IDIL_GRAD_BOTH:
        diff = ad.sub(p_minuend, p_subtrahend)
    else:  # IDIL, IDIL_INTRA_DOC, IDIL_NO_SILU: minuend-only gradient flow
        diff = ad.sub(p_minuend, ad.detach(p_subtrahend))
    if variant is LossVariant.IDIL_NO_SILU:
        return diff
    return ad.silu(diff)


def batch_loss(probs: Tensor, labels: list[int], variant: LossVariant) -> Tensor:
    """Mini-batch loss.

    IDIL family: sum over every label l, every x1 in bucket b_l, and every x2
    outside it, of the pair term with minuend p(l|x2) and subtrahend p(l|x1).
    The intra-doc variant adds, per document, ranking terms against its own
    detached correct-label score.  CE: mean negative log-likelihood.
    """
    n = len(labels)
    if n == 0:
        raise ValueError("empty batch")
    if probs.shape[0] != n:
        raise ValueError(f"probs rows ({probs.shape[0]}) != labels ({n})")

    if variant is LossVariant.CE:
        terms = [ad.log(ad.select(probs, i, labels[i])) for i in range(n)]
        return ad.scale(ad.sum_tensors(terms), -1.0 / n)

    buckets = bucket_batch(labels)
    terms: list[Tensor] = []
    for lab in sorted(buckets):
        members = buckets[lab]
        others = [i for i in range(n) if labels[i] != lab]
        for x1 in members:
            for x2 in others:
                terms.append(
                    idil_pair_loss(
                        ad.select(probs, x2, lab), ad.select(probs, x1, lab), variant
                    )
                )
    if variant is LossVariant.IDIL_INTRA_DOC:
        num_labels = probs.shape[1]
        for i in range(n):
            own = ad.detach(ad.select(probs, i, labels[i]))
            for lab in range(num_labels):
                if lab != labels[i]:
                    terms.append(ad.silu(ad.sub(ad.select(probs, i, lab), own)))
    return ad.sum_tensors(terms)
