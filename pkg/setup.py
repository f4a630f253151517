"""
Purpose: Package installation and distribution

High-level Overview:
Setup script mirroring pyproject.toml for tools that still call setup.py
directly.

Functions/Classes:
- `setup()`: Main setup function with:
  - Package name: "vessel-segmentation"
  - Dependencies: numpy, scipy, OpenCV, Pillow, scikit-learn, Click, Rich, etc.
  - Entry points: `vseg`, `vessel-seg`
  - Extra requirements: `dev`
"""

from setuptools import setup, find_packages
from pathlib import Path

# Read README for long description
readme_path = Path(__file__).parent / "README.md"
if readme_path.exists():
    with open(readme_path, "r", encoding="utf-8") as f:
        long_description = f.read()
else:
    long_description = "Retinal vessel segmentation with edge-aware labels"

# Read requirements
requirements_path = Path(__file__).parent / "requirements.txt"
with open(requirements_path, "r", encoding="utf-8") as f:
    requirements = [line.strip() for line in f if line.strip() and not line.startswith("#")]

setup(
    name="vessel-segmentation",
    version="1.0.0",
    description="Retinal vessel segmentation with edge-aware labels and a deeply supervised residual U-net",
    long_description=long_description,
    long_description_content_type="text/markdown",
    license="MIT",
    author="Vessel Segmentation Team",
    packages=find_packages(include=["vessel_segmentation", "vessel_segmentation.*"]),
    include_package_data=True,
    install_requires=requirements,
    extras_require={
        "dev": [
            "pytest",
            "black",
            "flake8",
            "mypy",
        ]
    },
    entry_points={
        "console_scripts": [
            "vseg=vessel_segmentation.cli:cli",
            "vessel-seg=vessel_segmentation.cli:cli",
        ],
    },
    python_requires=">=3.9",
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Image Recognition",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Operating System :: OS Independent",
    ],
    keywords="retina, fundus, vessel segmentation, U-net, deep supervision",
)
