"""Numeric kernels with a compiled fast path and a NumPy fallback.

The compiled extension is preferred when it imports cleanly; set
``FACTWORLD_KERNELS=reference`` to force the NumPy backend or
``FACTWORLD_KERNELS=compiled`` to require the extension (raising if it is
missing). ``BACKEND`` names the backend actually selected.
"""

from __future__ import annotations

import os

from . import _reference

_choice = os.environ.get("FACTWORLD_KERNELS", "").strip().lower()

if _choice in ("", "compiled", "fast"):
    try:
        from . import _fast as _impl

        BACKEND = "compiled"
    except ImportError:
        if _choice:
            raise ImportError(
                "FACTWORLD_KERNELS=compiled but the extension is not built; "
                "reinstall with a C compiler and Cython available"
            )
        _impl = _reference
        BACKEND = "reference"
elif _choice in ("reference", "python", "numpy"):
    _impl = _reference
    BACKEND = "reference"
else:
    raise ImportError(
        f"unknown FACTWORLD_KERNELS value {_choice!r}; "
        "use 'compiled' or 'reference'"
    )

group_mean_std = _impl.group_mean_std
grpo_advantages = _impl.grpo_advantages
cgdpo_advantages = _impl.cgdpo_advantages
clipped_objective_terms = _impl.clipped_objective_terms
clipped_objective_ratio_grad = _impl.clipped_objective_ratio_grad
rollout1_surface = _impl.rollout1_surface

__all__ = [
    "BACKEND",
    "group_mean_std",
    "grpo_advantages",
    "cgdpo_advantages",
    "clipped_objective_terms",
    "clipped_objective_ratio_grad",
    "rollout1_surface",
]
