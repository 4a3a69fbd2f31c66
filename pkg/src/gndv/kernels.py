"""Backend selection for the scalar-loop kernels.

The compiled Cython module is used when it is importable; otherwise the
pure-Python module is used. Setting ``GNDV_BACKEND=python`` forces the
fallback. Both backends produce bit-identical results.
"""
import os

from . import _pykernels

python_backend = _pykernels

try:
    from . import _kernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and os.environ.get("GNDV_BACKEND", "").lower() != "python":
    _impl = compiled_backend
    BACKEND = "compiled"
else:
    _impl = _pykernels
    BACKEND = "python"

splitmix64_fill = _impl.splitmix64_fill
box_muller = _impl.box_muller
permutation = _impl.permutation
scatter_add_columns = _impl.scatter_add_columns
knn_vote = _impl.knn_vote
trust_penalty = _impl.trust_penalty

__all__ = [
    "BACKEND",
    "compiled_backend",
    "python_backend",
    "splitmix64_fill",
    "box_muller",
    "permutation",
    "scatter_add_columns",
    "knn_vote",
    "trust_penalty",
]
