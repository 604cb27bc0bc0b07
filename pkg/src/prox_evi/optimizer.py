import numpy as np

from .errors import TrainingError


class Adam:
    """Bias-corrected Adam on a flat parameter vector.

    The moment vectors are allocated on the first step and keep that length.
    """

    def __init__(self, n_params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)

    def step(self, params, grad):
        params = np.asarray(params, dtype=np.float64)
        grad = np.asarray(grad, dtype=np.float64)
        if params.shape != self.m.shape or grad.shape != self.m.shape:
            raise ValueError(f"expected vectors of length {self.m.size}")
        if not np.all(np.isfinite(grad)):
            raise TrainingError(f"non-finite gradient at step {self.t + 1}", step=self.t + 1)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * (grad * grad)
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(state, params, grad):
    return state.step(params, grad)
