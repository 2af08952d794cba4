"""Physics backend selection.

The compiled kernel (``_physics``, built from ``_physics.pyx``) is used when
it imports; otherwise the numpy implementation in ``_physics_py`` is used.
Set ``TABLETOP_HER_PHYSICS=python`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _physics_py

python_backend = _physics_py
compiled_backend = None
try:  # pragma: no cover - depends on the build
    from . import _physics as compiled_backend  # type: ignore[no-redef]
except ImportError:
    compiled_backend = None

if compiled_backend is not None and os.environ.get("TABLETOP_HER_PHYSICS", "").lower() != "python":
    backend = compiled_backend
else:
    backend = python_backend

BACKEND = backend.BACKEND


def step_batch(states, actions, params, statics, diag):
    backend.step_batch(states, actions, params, statics, diag)


def box_energy(states, params, statics):
    return backend.box_energy(states, params, statics)
