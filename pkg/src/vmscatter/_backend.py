"""Kernel backend selection.

The compiled extension is used when importable; setting the environment
variable ``VMSCATTER_BACKEND=python`` forces the numpy fallback.
"""
import logging
import os

from . import _pykernels

logger = logging.getLogger(__name__)

_forced = os.environ.get("VMSCATTER_BACKEND", "").lower()
if _forced == "python":
    kernels = _pykernels
    NAME = "python"
else:
    try:
        from . import _ckernels as kernels  # type: ignore[attr-defined]
        NAME = "compiled"
    except ImportError:  # pragma: no cover - depends on the build
        if _forced == "compiled":
            raise
        kernels = _pykernels
        NAME = "python"
        logger.info("compiled kernels unavailable, using numpy fallback")

python_kernels = _pykernels


def get(name=None):
    """Return the kernel module for ``name`` ('compiled', 'python' or None)."""
    if name is None:
        return kernels
    if name == "python":
        return _pykernels
    if name == "compiled":
        from . import _ckernels  # type: ignore[attr-defined]
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def available():
    try:
        from . import _ckernels  # noqa: F401
        return ["compiled", "python"]
    except ImportError:
        return ["python"]
