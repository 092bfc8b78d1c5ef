import logging
from typing import Optional

import torch

logger = logging.getLogger(__name__)


@torch.no_grad()
def sgd_step(
    params: list[torch.Tensor],
    grads: list[Optional[torch.Tensor]],
    lr: float,
    weight_decay: float = 0.0,
    momentum: float = 0.0,
    buffers: Optional[list[Optional[torch.Tensor]]] = None,
) -> bool:
    """
    In-place SGD with momentum and L2 weight decay:

        d = g + wd * p
        buf = momentum * buf + d   (buf = d on the first step)
        p = p - lr * buf

    Returns False and leaves everything untouched when any gradient is non-finite.
    """
    if len(params) != len(grads):
        raise ValueError(f"sgd_step: {len(params)} params but {len(grads)} grads")
    if buffers is not None and len(buffers) != len(params):
        raise ValueError(f"sgd_step: {len(params)} params but {len(buffers)} momentum buffers")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is not None and tuple(g.shape) != tuple(p.shape):
            raise ValueError(f"sgd_step: grad {i} has shape {tuple(g.shape)}, param has {tuple(p.shape)}")
        if g is not None and not bool(torch.isfinite(g).all()):
            logger.warning(f"Non-finite gradient in parameter {i}; optimizer step skipped")
            return False

    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        d = g + weight_decay * p if weight_decay else g.clone()
        if momentum:
            if buffers is None:
                raise ValueError("sgd_step: momentum requires a buffer list")
            if buffers[i] is None:
                buffers[i] = d.clone()
            else:
                buffers[i].mul_(momentum).add_(d)
            d = buffers[i]
        p.sub_(lr * d)
    return True


def build_sgd(params, weight_decay: float = 1e-4, momentum: float = 0.9) -> torch.optim.SGD:
    # lr is set per step by guarded_step
    return torch.optim.SGD(
        [p for p in params if p.requires_grad], lr=0.0, momentum=momentum, weight_decay=weight_decay
    )


def guarded_step(optimizer: torch.optim.Optimizer, lr: float) -> bool:
    """
    Set every param group to `lr` and step, unless a gradient is non-finite;
    then nothing moves (momentum included) and False is returned.
    """
    for group in optimizer.param_groups:
        for i, p in enumerate(group["params"]):
            if p.grad is not None and not bool(torch.isfinite(p.grad).all()):
                logger.warning(f"Non-finite gradient in parameter {i}; optimizer step skipped")
                return False
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.step()
    return True
