"""
Numeric substrate for every learnable part of the pipeline.

Tensors are float64 ``torch.Tensor`` objects; reverse-mode differentiation is
torch autograd, whose ``grad_fn`` graph is the creation record of every
tensor. The functions here add the shape checks, stability conventions and
error reporting the rest of the package relies on.
"""
import typing

import torch
import torch.nn.functional as F

from jerseyid import JerseyIdError
from jerseyid.constants import LOG_CLAMP

DTYPE = torch.float64

DiffTensor = torch.Tensor


class ShapeError(JerseyIdError, ValueError):
    pass


class NonFiniteError(JerseyIdError, ValueError):
    pass


def tensor(data, requires_grad: bool = False) -> DiffTensor:
    return torch.as_tensor(data, dtype=DTYPE).clone().requires_grad_(requires_grad)


def matmul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    """Matrix product over the last two axes; leading axes must agree."""
    if a.dim() < 2 or b.dim() < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {tuple(a.shape)} @ {tuple(b.shape)}")
    if b.dim() > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch mismatch: {tuple(a.shape)} @ {tuple(b.shape)}")
    return torch.matmul(a, b)


def linear(x: DiffTensor, weight: DiffTensor, bias: typing.Optional[DiffTensor] = None) -> DiffTensor:
    if x.shape[-1] != weight.shape[-1]:
        raise ShapeError(f"linear expects last axis {weight.shape[-1]}, got {tuple(x.shape)}")
    return F.linear(x, weight, bias)


def softmax(x: DiffTensor, axis: int = -1) -> DiffTensor:
    if torch.isnan(x).any():
        raise NonFiniteError("softmax received NaN input")
    # torch subtracts the per-axis max before exponentiating
    return torch.softmax(x, dim=axis)


def layer_norm(x: DiffTensor, gain: DiffTensor, bias: DiffTensor, eps: float = 1e-5) -> DiffTensor:
    """
    Normalizes over the last axis. Zero-variance input maps to zeros before the
    affine step because eps sits inside the square root.
    """
    width = x.shape[-1]
    if width < 1:
        raise ShapeError("layer_norm needs a non-empty last axis")
    if tuple(gain.shape) != (width,) or tuple(bias.shape) != (width,):
        raise ShapeError(
            f"layer_norm affine shapes {tuple(gain.shape)}, {tuple(bias.shape)} do not match width {width}"
        )
    return F.layer_norm(x, (width,), gain, bias, eps)


def one_hot(index: typing.Union[int, torch.Tensor], num_classes: int) -> DiffTensor:
    index = torch.as_tensor(index, dtype=torch.long)
    return F.one_hot(index, num_classes).to(DTYPE)


def cross_entropy(p: DiffTensor, y: DiffTensor) -> DiffTensor:
    """-sum(y * log p) over the last axis, with log floored at ln(1e-12)."""
    if p.shape != y.shape:
        raise ShapeError(f"cross_entropy shape mismatch: p {tuple(p.shape)} vs y {tuple(y.shape)}")
    return -(y * torch.log(p.clamp_min(LOG_CLAMP))).sum(dim=-1)


def conv2d(x: DiffTensor, weight: DiffTensor, bias: typing.Optional[DiffTensor] = None,
           stride: int = 1, padding: int = 0) -> DiffTensor:
    if x.dim() != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"conv2d expects (N, {weight.shape[1]}, H, W) input, got {tuple(x.shape)}"
        )
    return F.conv2d(x, weight, bias, stride=stride, padding=padding)


def conv1d(x: DiffTensor, weight: DiffTensor, bias: typing.Optional[DiffTensor] = None,
           padding: int = 0) -> DiffTensor:
    if x.dim() != 3 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv1d expects (N, {weight.shape[1]}, T) input, got {tuple(x.shape)}")
    return F.conv1d(x, weight, bias, padding=padding)


def mean_pool(x: DiffTensor) -> DiffTensor:
    """Global mean over the two spatial axes of an (N, C, H, W) tensor."""
    if x.dim() != 4:
        raise ShapeError(f"mean_pool expects (N, C, H, W), got {tuple(x.shape)}")
    return x.mean(dim=(-2, -1))


def gradient_check(fn: typing.Callable, inputs: typing.Sequence[DiffTensor],
                   eps: float = 1e-5, rtol: float = 1e-4, atol: float = 1e-8) -> bool:
    """Compares analytic gradients with central finite differences."""
    return torch.autograd.gradcheck(fn, tuple(inputs), eps=eps, rtol=rtol, atol=atol)


class AdamState:
    """
    Bias-corrected Adam over named parameters.

    Wraps ``torch.optim.Adam`` and refuses to step on a non-finite gradient,
    naming the parameter that carries it.
    """

    def __init__(
        self,
        named_params: typing.Iterable[typing.Tuple[str, torch.nn.Parameter]],
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.named_params = list(named_params)
        self.optimizer = torch.optim.Adam(
            [p for _, p in self.named_params], lr=lr, betas=(beta1, beta2), eps=eps
        )
        self.step_count = 0

    @property
    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]

    def zero_grad(self) -> None:
        self.optimizer.zero_grad(set_to_none=True)

    def step(self) -> None:
        for name, param in self.named_params:
            if param.grad is not None and not torch.isfinite(param.grad).all():
                raise NonFiniteError(f"non-finite gradient in parameter '{name}'")
        self.optimizer.step()
        self.step_count += 1


def adam_step(
    state: AdamState,
    params: typing.Optional[typing.Sequence[torch.nn.Parameter]] = None,
    grads: typing.Optional[typing.Sequence[DiffTensor]] = None,
) -> typing.List[torch.nn.Parameter]:
    """
    Applies one Adam update. When grads are given they replace whatever
    backward accumulated on the matching params.
    """
    params = list(params) if params is not None else [p for _, p in state.named_params]
    if grads is not None:
        if len(grads) != len(params):
            raise ShapeError(f"{len(grads)} gradients for {len(params)} parameters")
        names = {id(p): name for name, p in state.named_params}
        for param, grad in zip(params, grads):
            if not torch.isfinite(grad).all():
                raise NonFiniteError(f"non-finite gradient in parameter '{names.get(id(param), '?')}'")
        for param, grad in zip(params, grads):
            param.grad = grad.detach().to(DTYPE).clone()
    state.step()
    return params


def milestone_lr(base_lr: float, milestones: typing.Sequence[int], factor: float, iteration: int) -> float:
    """Learning rate in effect at a 1-indexed iteration under step decay."""
    return base_lr * factor ** sum(1 for m in milestones if iteration > m)
