import numpy as np

from .base import ModelHandle, TargetEvaluation


class GaussianTarget(ModelHandle):
    """Exact multivariate normal target without auxiliary noise (``n_u = 0``)."""

    n_u = 0
    has_hessian = True

    def __init__(self, mean=0.0, cov=1.0):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.asarray(cov, dtype=float)
        if cov.ndim < 2:
            cov = np.diag(np.broadcast_to(np.atleast_1d(cov), self.mean.shape))
        self.cov = cov
        self.precision = np.linalg.inv(cov)
        self.n_theta = self.mean.size
        self.param_names = tuple(f"x{i + 1}" for i in range(self.n_theta))
        sign, logdet = np.linalg.slogdet(cov)
        self._const = -0.5 * (self.n_theta * np.log(2 * np.pi) + logdet)

    def evaluate(self, theta, u=None, with_hessian=False):
        diff = np.atleast_1d(theta) - self.mean
        pd = self.precision @ diff
        return TargetEvaluation(self._const - 0.5 * diff @ pd, -pd, -self.precision)

    def default_theta0(self):
        return self.mean.copy()
