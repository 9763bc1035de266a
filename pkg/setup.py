"""
Setup script for lsgrad-dtn
Installs the laboratory modules and the lsgrad-dtn console script
"""

from setuptools import setup


def read_requirements(path):
    with open(path, "r", encoding="utf-8") as f:
        return [line.split("#")[0].strip() for line in f
                if line.split("#")[0].strip()]


setup(
    name="lsgrad-dtn",
    version="0.1.0",
    description="Discrete laboratory for the Dirichlet-to-Neumann operator of the 1-Laplacian",
    python_requires=">=3.11",
    py_modules=[
        "errors", "grid", "field_io", "tvmin", "dtn", "resolvent", "evolution",
        "plap", "oracle", "lab", "lab_config", "event_bus", "lsgrad_cli",
    ],
    packages=["tools"],
    install_requires=read_requirements("requirements-core.txt"),
    extras_require={
        "full": ["matplotlib>=3.7.0"],
        "test": ["pytest>=7.4.0"],
    },
    entry_points={"console_scripts": ["lsgrad-dtn=lsgrad_cli:main"]},
)
