from setuptools import setup, find_packages

__version__ = "0.1.0"

with open("./docs/README.md", "r", encoding="utf-8") as f:
    long_description = f.read()

setup(
    name="sig-recognition",
    version=__version__,
    description="Online goal recognition with path signature trajectory trees and DTW",
    long_description=long_description,
    author="BlakeJC94",
    author_email="blakejamescook@gmail.com",
    python_requires=">=3.9",
    packages=find_packages(exclude=["tests"]),
    install_requires=[
        "numpy",
        "pandas",
        "plotly",
        "scipy",
        "tqdm",
    ],
    extras_require={
        "dev": [
            "black",
            "hypothesis",
            "pip-tools",
            "pylint",
            "pytest",
        ],
    },
    entry_points={
        "console_scripts": ["sig-recognition=sig_recognition.__main__:main"],
    },
)
