#! /usr/bin/env python3
"""Installation script."""

from setuptools import setup

setup(
    name="featureflow",
    use_scm_version=True,
    setup_requires=["setuptools_scm"],
    python_requires=">=3.10",
    install_requires=["numpy", "matplotlib"],
    extras_require={"test": ["pytest"]},
    packages=["featureflow", "featureflow.cli"],
    entry_points={
        "console_scripts": [
            "featureflow = featureflow.cli.featureflow:main",
        ],
    },
    license="GPLv3",
    description="In-network feature flow, temporal aggregation and Seq-NMS.",
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    keywords="video object detection feature flow seq-nms numpy",
)
