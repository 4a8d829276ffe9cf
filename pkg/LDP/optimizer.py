'''
Adaptive-moment optimiser updating only the tensors it was given.
'''

import numpy as np


def clip_grad_norm(parameters, max_norm):
    """
    Scale gradients in place so their joint L2 norm is at most max_norm
    :param parameters: Tensors whose .grad to clip
    :param max_norm: Largest allowed norm, 0 or None disables clipping
    :return: Norm before clipping
    """
    grads = [p.grad for p in parameters if p.grad is not None]
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in parameters:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


class Adam:
    """ Adam with bias correction; parameters without a gradient are skipped for the step """

    def __init__(self, parameters, lr, betas=(0.9, 0.999), eps=1e-8):
        self.parameters = list(parameters)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.first_moments = [np.zeros(p.shape) for p in self.parameters]
        self.second_moments = [np.zeros(p.shape) for p in self.parameters]

    def zero_grad(self):
        for p in self.parameters:
            p.grad = None

    def step(self):
        self.step_count += 1
        correction1 = 1.0 - self.beta1 ** self.step_count
        correction2 = 1.0 - self.beta2 ** self.step_count
        for p, m, v in zip(self.parameters, self.first_moments, self.second_moments):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
