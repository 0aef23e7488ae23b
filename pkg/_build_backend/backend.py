"""Setuptools PEP 517 backend that ignores the repository's bootstrap setup.py.

``setup.py`` in this repository is an environment bootstrap script (dependency
check, .env creation, acceptance checks), not a setuptools configuration, so
the build takes its metadata from pyproject.toml only.
"""

from setuptools import build_meta as _orig
from setuptools.build_meta import *  # noqa: F401,F403
from setuptools.build_meta import _BuildMetaBackend


class _PyprojectOnlyBackend(_BuildMetaBackend):
    def run_setup(self, setup_script="setup.py"):
        exec("from setuptools import setup; setup()", {"__name__": "__main__"})


_BACKEND = _PyprojectOnlyBackend()
get_requires_for_build_wheel = _BACKEND.get_requires_for_build_wheel
get_requires_for_build_sdist = _BACKEND.get_requires_for_build_sdist
prepare_metadata_for_build_wheel = _BACKEND.prepare_metadata_for_build_wheel
build_wheel = _BACKEND.build_wheel
build_sdist = _BACKEND.build_sdist
get_requires_for_build_editable = _BACKEND.get_requires_for_build_editable
prepare_metadata_for_build_editable = _BACKEND.prepare_metadata_for_build_editable
build_editable = _BACKEND.build_editable
__all__ = _orig.__all__
