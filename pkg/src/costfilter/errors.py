"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Bad configuration: mismatched shapes, invalid parameter values, unknown options."""


class FormatError(ValueError):
    """Malformed file content (PFM/PNG/weights)."""


class DataError(ValueError):
    """Valid format but unusable data, e.g. no valid pixels to evaluate."""


class TrainingError(RuntimeError):
    """Training diverged or otherwise failed mid-run."""
