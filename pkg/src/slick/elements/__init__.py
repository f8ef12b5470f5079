"""Element library.  ``register_all`` imports every module that defines element classes."""

from .base import REGISTRY, Element, ElementInitError, FatalElementError, element_class


def register_all() -> dict:
    from . import basic, devices, ip, pattern, secure  # noqa: F401
    from .. import chain  # noqa: F401  (DPDKRing)
    return REGISTRY


__all__ = ["REGISTRY", "Element", "ElementInitError", "FatalElementError", "element_class",
           "register_all"]
