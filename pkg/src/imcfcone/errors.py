class ImcfError(Exception):
    """Base class for all package errors."""


class DomainError(ImcfError, ValueError):
    """Argument outside the interval of a warping function or its image."""


class NumericError(ImcfError, ArithmeticError):
    """Root bracketing, quadrature or eigen-solver failure."""


class ConfigurationError(ImcfError, ValueError):
    """Invalid mesh, flow or experiment parameters, or incompatible initial data."""


class SingularityError(ImcfError):
    """Mean curvature reached zero: the flow speed ``1/H`` is undefined.

    ``node`` is the flat node index and ``value`` the offending denominator
    ``n*lambda' - sigma_tilde^{ij} phi_{i,j}``.
    """

    def __init__(self, node, value, theta=None, psi=None):
        self.node = int(node)
        self.value = float(value)
        self.theta = theta
        self.psi = psi
        where = f"node {self.node}"
        if theta is not None:
            where += f" (theta={theta:.6g}" + (f", psi={psi:.6g})" if psi is not None else ")")
        super().__init__(f"non-positive speed denominator {self.value:.6g} at {where}")
