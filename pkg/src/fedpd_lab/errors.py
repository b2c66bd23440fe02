class ConfigError(ValueError):
    """Invalid configuration (bad hyperparameter, unknown key, wrong family)."""


class DataFormatError(ValueError):
    """Malformed dataset file; message carries the offending line number."""


class SolverDiverged(RuntimeError):
    """A local solve left the trust region (iterate norm above the guard)."""
