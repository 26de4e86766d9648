"""Setup script for the Langevin CLT toolkit."""

from setuptools import setup, find_packages
from pathlib import Path

# Read the README file
this_directory = Path(__file__).parent
long_description = (this_directory / "README.md").read_text(encoding='utf-8')

# Runtime requirements only; test tools live in the dev extra
requirements = ["numpy>=1.24.0", "scipy>=1.10.0"]

setup(
    name="langevin-clt",
    version="0.1.0",
    description="Randomized-midpoint Langevin samplers with CLT, bias and regime experiments",
    long_description=long_description,
    long_description_content_type="text/markdown",
    author="Langevin CLT Team",
    license="MIT",

    # Package configuration
    packages=find_packages(include=["core*", "engines*", "utils*"]),
    py_modules=["app"],

    # Dependencies
    python_requires=">=3.10",
    install_requires=requirements,

    # Optional dependencies
    extras_require={
        'dev': [
            'pytest>=7.4.0',
            'hypothesis>=6.80.0',
            'black>=23.0.0',
            'flake8>=6.0.0',
            'mypy>=1.5.0',
        ],
    },

    # Entry points
    entry_points={
        'console_scripts': [
            'langevin-clt=app:main',
        ],
    },

    # Classifiers
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],

    keywords="langevin mcmc randomized midpoint central limit theorem wasserstein",
)
