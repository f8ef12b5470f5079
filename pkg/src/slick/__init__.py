"""Secure middlebox framework: element graphs over a simulated enclave."""

from .runtime import (Instance, InstanceSettings, Role, StopCondition, instantiate,
                      load_instance)

__version__ = "0.1.0"

__all__ = ["Instance", "InstanceSettings", "Role", "StopCondition", "instantiate", "load_instance"]
