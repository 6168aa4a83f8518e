"""Exception types shared across the package."""


class MeshError(ValueError):
    """Malformed or unsupported mesh input."""


class AssemblyError(ValueError):
    """Raised when a face is degenerate and cotangent weights are undefined."""

    def __init__(self, face: int, area: float):
        super().__init__(f"degenerate face {face}: area {area:.3e}")
        self.face = face
        self.area = area


class ResourceLimitError(RuntimeError):
    """Requested discretization exceeds the supported size."""


class ConvergenceError(RuntimeError):
    """Iterative solve failed to reach its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class ResolutionError(ValueError):
    """Bubble scale is too fine for the mesh, or the scale grid is too short."""
