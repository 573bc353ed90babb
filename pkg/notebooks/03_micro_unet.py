"""
A small U-Net trained by hand
=============================

The reverse-mode engine and micro-UNet: shapes, an end-to-end gradient
check, and 200 Adam steps on a single synthetic patch.
"""

import numpy as np

from hierseg import bundled_tree, leaf_cut
from hierseg.diffnet import AdamState, MicroUNet, NetConfig, adam_step, forward
from hierseg.diffnet.model import forward_backward
from hierseg.gradcheck import network_gradcheck
from hierseg.losses import combined_loss, softmax
from hierseg.pipeline import pixel_targets
from hierseg.synthdata import default_appearance, masks_for_cut, render_image

tree = bundled_tree()
net = MicroUNet(NetConfig(tree.n_leaves + 1), seed=0)
print(f"{net.n_parameters} parameters")
print("64x64 patch ->", forward(net, np.zeros((64, 64, 3))).shape)
print(f"end-to-end gradient error on 8x8 patches: {network_gradcheck(tree):.2e}")

image, blobs, leaves = render_image(default_appearance(tree), 5, 0, 64)
targets = pixel_targets([masks_for_cut(tree, leaf_cut(tree), blobs, leaves)], leaf_cut(tree))


def loss_fn(scores):
    loss, grad = combined_loss(softmax(scores.reshape(-1, scores.shape[-1])), targets, tree)
    return loss, grad.reshape(scores.shape)


opt = AdamState()
history = []
for step in range(200):
    loss, grads = forward_backward(net, image[None] / 255.0, loss_fn)
    adam_step(opt, net.params, grads)
    history.append(loss)
    if step % 40 == 0:
        print(f"step {step:3d} loss {loss:.4f}")
falling = np.mean(np.diff(history)[19:] < 0)
print(f"final loss {history[-1]:.4f}; loss fell on {falling:.0%} of steps after step 20")
