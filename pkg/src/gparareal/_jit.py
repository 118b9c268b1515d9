"""Optional numba acceleration; falls back to pure Python when unavailable."""

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only on lightweight installs
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        """No-op replacement for numba.njit."""
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def decorate(fn):
            return fn

        return decorate
