"""Speech command recognition trained with a sequential confusion-error criterion.

Submodules: ``numerics``, ``lexicon``, ``model``, ``losses``, ``graph``,
``decoder``, ``corpus``, ``evaluate``, ``train`` and ``cli``. Hot loops live in
``kernels``, which picks the compiled backend when it is importable.
"""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
