#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""The setup script."""

from setuptools import setup, find_packages


long_description = """
**viser** trains and evaluates iris presentation attack detectors with [PyTorch](https://pytorch.org/),
guiding the networks with human saliency (segmentation masks, hand annotations and eye-tracking data).
It is built on the [torchtuples](https://github.com/havakv/torchtuples) package for training [PyTorch](https://pytorch.org/) models.

The package contains

- saliency compilation from masks, multi-annotator drawings and fixation records (with HDBSCAN de-noising)
- saliency-guided training of class activation maps (cross-entropy plus CAM alignment)
- a resumable leave-one-attack-type-out protocol with AUROC and APCER @ BPCER metrics
- classical probes on frozen foundation-model embeddings
- delta tables against a cross-entropy baseline
"""

requirements = [
    'torch>=2.0',
    'torchvision>=0.15',
    'torchtuples>=0.2.0',
    'feather-format>=0.4.0',
    'numba>=0.44',
    'numpy>=1.21',
    'pandas>=1.5',
    'scipy>=1.10',
    'scikit-learn>=1.3',
    'requests>=2.22.0',
    'Pillow>=9.1',
    'tqdm>=4.60',
]

setup(
    name='viser',
    version='0.1.0',
    description="Saliency-guided iris presentation attack detection",
    long_description=long_description,
    long_description_content_type='text/markdown',
    packages=find_packages(exclude=['tests', 'tests.*']),
    include_package_data=True,
    install_requires=requirements,
    entry_points={
        'console_scripts': ['viser=viser.cli:main'],
    },
    license="BSD license",
    zip_safe=False,
    keywords='viser',
    classifiers=[
        'Development Status :: 2 - Pre-Alpha',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: BSD License',
        'Natural Language :: English',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.8',
    ],
    python_requires='>=3.8'
)
