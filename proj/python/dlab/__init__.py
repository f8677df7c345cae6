"""Thin python wrapper around the _dlab extension module."""

try:
    from _dlab import *  # noqa: F401,F403
    from _dlab import __version__  # noqa: F401
except ImportError as exc:  # pragma: no cover
    raise ImportError(
        "the _dlab extension is not on sys.path; build it with CMake "
        "(or `pip install .`) first"
    ) from exc
