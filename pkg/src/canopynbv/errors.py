"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An argument broke a documented precondition (range, shape, finiteness)."""


class OutOfRoiError(ValueError):
    """A voxel key or point lies outside the mapped region of interest."""


class SceneGenerationError(RuntimeError):
    """Procedural scene construction could not satisfy its constraints."""


class ConfigError(ValueError):
    """A configuration or experiment-spec file is malformed."""
