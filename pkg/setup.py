# -*- coding: utf-8 -*-
from pathlib import Path

from setuptools import find_packages, setup

requirements_file_path = Path(__file__).parent / "requirements.txt"
with open(requirements_file_path) as file:
    install_requires = file.readlines()

with open("README.md", "r") as f:
    long_description = f.read()

setup(
    name="stpp-mot",
    version="0.0.1",
    description=(
        "Spatio-temporal point process filtering of bad detections for "
        "tracklet-based multiple object tracking"
    ),
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(where="src"),
    package_dir={"": "src"},
    package_data={"stpp_mot.synthetic": ["config.yaml"]},
    include_package_data=True,
    python_requires=">=3.9,<3.13",
    install_requires=install_requires,
    extras_require={"test": ["pytest==7.4.4", "hypothesis==6.92.2"]},
    entry_points={
        "console_scripts": [
            "stpp-mot=stpp_mot.synthetic.main_run_pipeline:main",
        ],
    },
)
