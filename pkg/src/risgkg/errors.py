class ConfigError(ValueError):
    """Invalid configuration (bad geometry, quantizer levels, config file...)."""


class ModelError(ValueError):
    """Input violates a modelling assumption, e.g. an indefinite correlation matrix."""


class ContractViolation(ValueError):
    """A beamforming vector or probe input breaks its feasibility contract."""


class DegenerateBlockError(ValueError):
    """A feature block has no spread (max == min) and cannot be normalized."""
