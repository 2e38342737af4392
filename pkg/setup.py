"""portsim package setup. Metadata lives in pyproject.toml."""
from setuptools import setup

setup()
