"""Exception types shared across the package."""


class RiskLqrError(Exception):
    """Base class for all package errors."""


class NumericalError(RiskLqrError):
    """A dense kernel failed to produce a reliable result."""


class StabilityError(RiskLqrError):
    """A closed-loop matrix is not (strictly) stable.

    Attributes:
        spectral_radius: the offending spectral radius.
    """

    def __init__(self, spectral_radius, message=None):
        self.spectral_radius = float(spectral_radius)
        super().__init__(
            message or f"closed loop is not stable (spectral radius {spectral_radius:.12g})"
        )


class StabilizabilityError(RiskLqrError):
    """The Riccati iteration did not converge to a stabilizing solution."""


class DivergenceError(RiskLqrError):
    """A simulated trajectory exceeded the divergence cap.

    Attributes:
        step: time index at which the cap was exceeded.
        norm: state norm observed there.
    """

    def __init__(self, step, norm):
        self.step = int(step)
        self.norm = float(norm)
        super().__init__(f"state norm {norm:.3e} exceeded divergence cap at step {step}")


class BatchFailure(RiskLqrError):
    """Every sample of a zero-order gradient batch failed to evaluate.

    Signals that the current gain is too close to the stability boundary
    for the chosen smoothing radius.
    """

    def __init__(self, n_samples, radius):
        self.n_samples = int(n_samples)
        self.radius = float(radius)
        super().__init__(
            f"all {n_samples} perturbation samples at radius {radius:g} failed to evaluate"
        )


class StepRejected(RiskLqrError):
    """An optimizer step could not be repaired by backtracking.

    Attributes:
        iteration: outer iteration at which the step was abandoned.
        grad_norm: norm of the rejected update direction.
        eta: last step size tried.
        best_radius: smallest closed-loop spectral radius seen while backtracking.
    """

    def __init__(self, iteration, grad_norm, eta, best_radius):
        self.iteration = int(iteration)
        self.grad_norm = float(grad_norm)
        self.eta = float(eta)
        self.best_radius = float(best_radius)
        super().__init__(
            f"step rejected at iteration {iteration} after backtracking "
            f"(grad norm {grad_norm:.3e}, last step {eta:.3e}, "
            f"best spectral radius {best_radius:.6f})"
        )


class InitializationError(RiskLqrError):
    """No stabilizing structured gain was found.

    Attributes:
        best_radius: best (smallest) spectral radius encountered.
    """

    def __init__(self, best_radius):
        self.best_radius = float(best_radius)
        super().__init__(
            f"no stabilizing structured gain found (best spectral radius {best_radius:.6f})"
        )


class ConfigError(RiskLqrError):
    """An experiment configuration failed validation.

    Attributes:
        path: dotted path of the offending key, when known.
    """

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)
