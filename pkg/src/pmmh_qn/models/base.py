from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class TargetEvaluation:
    """Noisy log-target and its derivatives at one ``(theta, u)`` pair.

    ``logtarget`` is the log-prior (natural parameters) plus the estimated
    log-likelihood. ``grad`` is the gradient, in unconstrained coordinates, of
    ``logtarget`` plus the log-Jacobian of the reparameterisation, i.e. of
    the log-density the chain actually targets. ``hess`` is the Hessian of
    that same density when the model can provide it.
    """

    logtarget: float
    grad: np.ndarray
    hess: Optional[np.ndarray] = None


class ModelHandle:
    """Interface shared by the target models.

    Subclasses set ``n_theta``, ``n_u`` and ``param_names`` and implement
    :meth:`evaluate`. Models with a non-identity reparameterisation override
    :meth:`to_natural`, :meth:`to_unconstrained` and :meth:`log_jacobian`.
    """

    n_theta: int
    n_u: int
    param_names: tuple = ()
    has_hessian = False

    def evaluate(self, theta, u, with_hessian=False):
        raise NotImplementedError

    def log_target(self, theta, u):
        """Log-target estimate alone; models override this to skip the gradient."""
        return self.evaluate(theta, u).logtarget

    def to_natural(self, theta):
        return np.asarray(theta, dtype=float)

    def to_unconstrained(self, params):
        return np.asarray(params, dtype=float)

    def log_jacobian(self, theta):
        """``log |d natural / d unconstrained|`` at ``theta``."""
        return 0.0

    def log_jacobian_ratio(self, theta_new, theta_old):
        return self.log_jacobian(theta_new) - self.log_jacobian(theta_old)

    def default_theta0(self):
        return np.zeros(self.n_theta)
