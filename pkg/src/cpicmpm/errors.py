"""Exception hierarchy shared across the package."""


class MPMError(Exception):
    pass


class MalformedFileError(MPMError, ValueError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class UnsupportedGeometryError(MPMError, ValueError):
    pass


class BaselineUnsupportedError(MPMError, ValueError):
    """The requested collision baseline cannot handle this collider."""


class ConfigurationError(MPMError, ValueError):
    pass


class BoundsError(MPMError, ValueError):
    def __init__(self, name, value, bounds):
        self.name = name
        self.value = value
        self.bounds = bounds
        super().__init__(f"parameter {name}={value!r} outside bounds {bounds}")


class DimensionError(MPMError, ValueError):
    pass


class OutOfDomainError(MPMError):
    def __init__(self, particle_ids):
        self.particle_ids = list(particle_ids)
        head = ", ".join(str(i) for i in self.particle_ids[:10])
        super().__init__(f"particles left the simulation interior: {head}")


class NumericalDegeneracyError(MPMError, FloatingPointError):
    def __init__(self, particle_ids, message="non-invertible deformation gradient"):
        self.particle_ids = list(particle_ids)
        head = ", ".join(str(i) for i in self.particle_ids[:10])
        super().__init__(f"{message} at particles {head}")


class DivergenceError(MPMError, FloatingPointError):
    def __init__(self, message="simulation diverged (non-finite state); reduce dt or k_h"):
        super().__init__(message)
