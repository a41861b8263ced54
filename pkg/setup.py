#!/usr/bin/env python

from setuptools import setup

setup(
    name="underwater_dal",
    version="0.1.0",
    description="Underwater image synthesis across Jerlov water types and enhancement with a water-type adversarial encoder-decoder",
    author="",
    author_email="",
    url="",
    packages=[
        "underwater_dal",
        "underwater_dal.analysis",
        "underwater_dal.datastore",
        "underwater_dal.formation",
        "underwater_dal.lib",
        "underwater_dal.metrics",
        "underwater_dal.models",
        "underwater_dal.nn",
        "underwater_dal.training",
    ],
    package_dir={
        "underwater_dal": "src/underwater_dal",
        "underwater_dal.analysis": "src/underwater_dal/analysis",
        "underwater_dal.datastore": "src/underwater_dal/datastore",
        "underwater_dal.formation": "src/underwater_dal/formation",
        "underwater_dal.lib": "src/underwater_dal/lib",
        "underwater_dal.metrics": "src/underwater_dal/metrics",
        "underwater_dal.models": "src/underwater_dal/models",
        "underwater_dal.nn": "src/underwater_dal/nn",
        "underwater_dal.training": "src/underwater_dal/training",
    },
    package_data={"underwater_dal": ["data/water_types.txt"]},
    scripts=[
        "src/underwater_dal/scripts/uie_dal.py",
    ],
    install_requires=[
        "numpy >= 1.24.4",
        "scipy >= 1.10.0",
        "docopt == 0.6.2",
        "Pillow >= 9.5.0",
        "tqdm >= 4.65.0",
        "scikit-learn >= 1.2.2",
    ],
    extras_require={"test": ["pytest >= 7.3.1"]},
)
