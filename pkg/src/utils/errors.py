"""
异常层级与退出码

Library calls raise these; main.py maps them onto stable process exit codes.
"""


class RadpairError(Exception):
    """Base class for every error the simulator reports to the user."""

    exit_code = 1


class ConfigError(RadpairError, ValueError):
    """Config schema violation. The message names the offending field."""

    exit_code = 2

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class PhysicsError(RadpairError, ValueError):
    """Invalid physical input: non-Hermitian H, bad projector, bad ρ0, unstable step."""

    exit_code = 3


class OutputError(RadpairError, OSError):
    """Writing results failed."""

    exit_code = 4


class ResidualError(RadpairError):
    """A self-check residual exceeded its tolerance."""

    exit_code = 5
