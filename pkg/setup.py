#! /usr/bin/env python

from setuptools import setup

setup(
    name='metapower',
    version='0.1.0',
    description='Meta-learning of graph neural network power control policies',
    keywords='wireless power-control meta-learning graph-neural-networks',
    license='GPLv3',
    packages=['metapower'],
    package_data={'': ['LICENSE']},
    install_requires=[
        'numpy>=1.20',
        'pyyaml>=5.1'
    ],
    extras_require={
        'test': ['scipy']
    },
    entry_points={
        'console_scripts': ['metapower=metapower.cli:main']
    }
)
