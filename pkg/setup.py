from typing import List
from setuptools import setup, find_packages


def get_requires() -> List[str]:
    return [
        "numpy >= 1.22, < 3",
        "scipy >= 1.8, < 2",
        "typing_extensions >= 3.10.0.0, < 5",
        ]


def support_pyvers(major: int, minor: range) -> List[str]:
    return [f"Programming Language :: Python :: {major}.{i}" for i in minor]


setup(
    name="qbm_lab",
    version="0.1.0a",
    description=
    "Numerical lab for quantum Brownian motion master equations and the decoherence kernel",
    long_description=open("README.md", "r").read(),
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["examples", "examples.*"]),
    install_requires=get_requires(),
    extras_require={
        # yapf requires toml to load pyproject.toml
        "dev": ["mypy", "pylint", "yapf", "toml", "pyflakes", "pyright"],
        },
    entry_points={
        "console_scripts": ["qbm=qbm_lab.__main__:cli"],
        },
    python_requires=">=3.10.0",
    classifiers=[
        *support_pyvers(3, range(10, 13)), "Programming Language :: Python :: 3 :: Only",
        "Development Status :: 3 - Alpha", "Intended Audience :: Science/Research",
        "Natural Language :: English", "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering :: Physics", "Typing :: Typed",
        "License :: OSI Approved :: GNU General Public License v3 (GPLv3)"
        ],
    )
