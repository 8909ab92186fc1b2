"""
Created on 2026-10-18

@author: wf

Foresight, inverse dynamics and total losses.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from pidm import tensor as T
from pidm.data import Batch
from pidm.tensor import Tensor

logger = logging.getLogger(__name__)

ALPHA = 0.5
LAMBDA = 0.01


class LossError(ValueError):
    """
    a loss without valid entries or with malformed targets
    """


@dataclass
class LossTerms:
    """
    the loss components of one step; l_fore is None when not computed
    """

    l_fore: Optional[Tensor]
    l_arm: Tensor
    l_gripper: Tensor
    l_inv: Tensor
    total: Tensor

    def values(self) -> Dict[str, Optional[float]]:
        return {
            "l_fore": None if self.l_fore is None else self.l_fore.item(),
            "l_arm": self.l_arm.item(),
            "l_gripper": self.l_gripper.item(),
            "l_inv": self.l_inv.item(),
            "total": self.total.item(),
        }


def _weights(valid: np.ndarray, per_step: int, like: Tensor) -> np.ndarray:
    valid = np.asarray(valid, dtype=bool)
    count = int(valid.sum())
    if count == 0:
        raise LossError("no valid timesteps")
    return valid.astype(like.dtype) / (count * per_step)


def loss_fore(pred_images: Tensor, target_images, valid) -> Tensor:
    """
    pixel MSE over valid timesteps, both views, all pixels and channels

    Args:
        pred_images: [B, m, 2, H, W, 3]
        target_images: same shape, scaled to [0,1]
        valid: bool [B, m]
    """
    target = np.asarray(target_images, dtype=pred_images.dtype)
    if target.shape != pred_images.shape:
        raise LossError(f"prediction {pred_images.shape} and target {target.shape} differ")
    per_step = int(np.prod(pred_images.shape[2:]))
    weights = _weights(valid, per_step, pred_images)
    weights = weights.reshape(weights.shape + (1,) * (pred_images.ndim - 2))
    diff = pred_images - Tensor(target)
    return (diff * diff * Tensor(weights)).sum()


def loss_inv(arm_pred: Tensor, gripper_pred: Tensor, target_chunks, valid):
    """
    smooth-L1 arm loss and BCE gripper loss over valid timesteps

    Args:
        arm_pred: [B, m, n, arm_dim]
        gripper_pred: [B, m, n, 1] probabilities
        target_chunks: [B, m, n, arm_dim + 1], gripper last
        valid: bool [B, m]

    Returns:
        tuple: l_arm, l_gripper, l_inv = l_arm + LAMBDA * l_gripper
    """
    target = np.asarray(target_chunks, dtype=arm_pred.dtype)
    arm_dim = arm_pred.shape[-1]
    if target.shape[:-1] != arm_pred.shape[:-1] or target.shape[-1] != arm_dim + 1:
        raise LossError(f"target chunks {target.shape} do not match predictions {arm_pred.shape}")
    arm_target = target[..., :arm_dim]
    gripper_target = target[..., arm_dim:]
    valid = np.asarray(valid, dtype=bool)
    if not np.all(np.isin(gripper_target[valid], (0.0, 1.0))):
        raise LossError("gripper targets must be 0 or 1")
    chunk = arm_pred.shape[2]
    arm_weights = _weights(valid, chunk * arm_dim, arm_pred)[..., None, None]
    gripper_weights = _weights(valid, chunk, arm_pred)[..., None, None]
    l_arm = (T.smooth_l1(arm_pred - Tensor(arm_target)) * Tensor(arm_weights)).sum()
    l_gripper = (T.bce(gripper_pred, Tensor(gripper_target)) * Tensor(gripper_weights)).sum()
    l_inv = l_arm + l_gripper * LAMBDA
    return l_arm, l_gripper, l_inv


def total_loss(l_fore: Optional[Tensor], l_inv: Tensor, no_fore: bool = False, no_inv: bool = False) -> Tensor:
    """
    ALPHA * l_fore + l_inv with either term dropped by its ablation flag
    """
    if no_fore and no_inv:
        raise LossError("cannot drop both loss terms")
    if no_inv:
        if l_fore is None:
            raise LossError("no_inv needs the foresight loss")
        return l_fore * ALPHA
    if no_fore or l_fore is None:
        return l_inv
    return l_fore * ALPHA + l_inv


def compute_losses(model, batch: Batch, no_fore: bool = False, no_inv: bool = False) -> LossTerms:
    """
    forward the batch through model and evaluate all loss terms;
    with no_fore the image decoder is not run at all
    """
    frs, inv = model.forward(batch)
    arm, gripper = model.decode_actions(inv)
    l_arm, l_gripper, l_inv = loss_inv(arm, gripper, batch.target_actions, batch.valid)
    l_fore = None
    if not no_fore:
        pred_images = model.decode_image(frs)
        l_fore = loss_fore(pred_images, batch.target_images.astype(np.float64) / 255.0, batch.valid)
    total = total_loss(l_fore, l_inv, no_fore=no_fore, no_inv=no_inv)
    return LossTerms(l_fore, l_arm, l_gripper, l_inv, total)
