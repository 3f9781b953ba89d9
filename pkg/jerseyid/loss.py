import typing

import torch
from torch import nn

from jerseyid import numkit
from jerseyid.constants import DIGIT_ABSENT, DIGIT_CLASSES, NULL_CLASS_INDEX
from jerseyid.protocol import HeadOutputs, LabelTriple, RosterIndex

RosterLike = typing.Union[RosterIndex, int]


def _as_roster(roster: RosterLike) -> RosterIndex:
    return RosterIndex.default(roster) if isinstance(roster, int) else roster


class LossWeights(nn.Module):
    """
    Learned task weights parameterized as sigma_i = exp(s_i), so the loss
    exp(-2 s_i) * L_i + s_i stays finite for every real s_i.
    """

    def __init__(self, learn: bool = True):
        super().__init__()
        self.s = nn.Parameter(torch.zeros(3, dtype=numkit.DTYPE), requires_grad=learn)

    @property
    def sigma(self) -> torch.Tensor:
        return torch.exp(self.s)


def encode_labels(jersey: typing.Optional[int], roster: RosterLike) -> LabelTriple:
    """
    Holistic index from the roster ordering (null = 0). Two-digit numbers split
    into (tens, units); single-digit numbers take the first slot with the
    second absent; null has both digits absent.
    """
    roster = _as_roster(roster)
    y0 = roster.index_of(jersey)
    if jersey is None:
        return LabelTriple(y0=NULL_CLASS_INDEX, y1=DIGIT_ABSENT, y2=DIGIT_ABSENT)
    if jersey >= 10:
        return LabelTriple(y0=y0, y1=jersey // 10, y2=jersey % 10)
    return LabelTriple(y0=y0, y1=jersey, y2=DIGIT_ABSENT)


def decode_label(y: typing.Union[LabelTriple, int], roster: RosterLike) -> typing.Optional[int]:
    index = y.y0 if isinstance(y, LabelTriple) else int(y)
    return _as_roster(roster).jersey_at(index)


def label_targets(labels: typing.Sequence[LabelTriple], num_classes: int) -> typing.Tuple[torch.Tensor, ...]:
    """One-hot targets (B, K), (B, 11), (B, 11) for a batch of label triples."""
    y0 = numkit.one_hot(torch.tensor([y.y0 for y in labels]), num_classes)
    y1 = numkit.one_hot(torch.tensor([y.y1 for y in labels]), DIGIT_CLASSES)
    y2 = numkit.one_hot(torch.tensor([y.y2 for y in labels]), DIGIT_CLASSES)
    return y0, y1, y2


def task_losses(out: HeadOutputs, y: typing.Union[LabelTriple, typing.Sequence[LabelTriple]]):
    """Per-sample holistic and digit cross-entropies; head i is paired with digit i."""
    batched = out.p0.dim() == 2
    labels = list(y) if batched else [y]
    p0, p1, p2 = (out.p0, out.p1, out.p2) if batched else (out.p0[None], out.p1[None], out.p2[None])
    y0, y1, y2 = label_targets(labels, p0.shape[-1])
    return (
        numkit.cross_entropy(p0, y0),
        numkit.cross_entropy(p1, y1),
        numkit.cross_entropy(p2, y2),
    )


def combine(losses: typing.Sequence[torch.Tensor], w: LossWeights) -> torch.Tensor:
    """sum_i exp(-2 s_i) L_i + sum_i s_i for scalar task losses L_i."""
    total = w.s.sum()
    for i, task_loss in enumerate(losses):
        total = total + torch.exp(-2.0 * w.s[i]) * task_loss
    return total


def multitask_loss(
    out: HeadOutputs,
    y: typing.Union[LabelTriple, typing.Sequence[LabelTriple]],
    w: LossWeights,
) -> torch.Tensor:
    """Uncertainty-weighted sum of the three cross-entropies, averaged over the batch."""
    return combine([task_loss.mean() for task_loss in task_losses(out, y)], w)
