#!/usr/bin/env python3
"""
Setup script for trojanforge - Trojan data-poisoning experiments
"""

from setuptools import setup, find_packages
from pathlib import Path

# Read README for long description
this_directory = Path(__file__).parent
long_description = (this_directory / "README.md").read_text(encoding='utf-8')

# Read requirements.txt
with open('requirements.txt') as f:
    requirements = f.read().splitlines()

setup(
    name="trojanforge",
    version="1.0.0",
    description="Trojan data-poisoning experiments: poisoning-ratio search and min-max detector evasion",
    long_description=long_description,
    long_description_content_type="text/markdown",

    # Packages and modules
    packages=find_packages(exclude=["tests", "tests.*"]),
    package_dir={"": "."},

    # Dependencies
    install_requires=requirements,
    extras_require={
        'dev': [
            'pytest>=6.0.0',
            'pytest-cov>=2.0.0',
        ],
    },

    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Topic :: Security",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Operating System :: OS Independent",
        "Environment :: Console",
    ],
    python_requires=">=3.9",
    keywords=["data-poisoning", "backdoor", "trojan", "submodular-optimization", "min-max-training"],

    # Command line scripts
    entry_points={
        'console_scripts': [
            'trojanforge=src.cli:main',
        ],
    },

    include_package_data=True,
    package_data={
        '': ['README.md', 'requirements.txt', 'experiment_config.example.conf'],
    },
    zip_safe=False,
    license="MIT",
)
