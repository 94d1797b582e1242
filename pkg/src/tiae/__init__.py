"""tiae: transform-invariant autoencoder with shift-parameter inference.

Submodules import lazily so the CLI can apply the TIAE_THREADS cap before
numpy (and its BLAS thread pool) loads.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "autodiff", "cli", "config", "data", "evaluation", "gradcheck",
    "layers", "losses", "models", "rng", "training", "transforms",
)


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib
        module = importlib.import_module(f".{name}", __name__)
        globals()[name] = module
        return module
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
