from setuptools import find_packages, setup

setup(
    name='vlsatools',
    version='0.1.0',
    packages=find_packages(),
    license='LICENSE',
    description='Desk-scale video/text/audio self-supervised pre-training',
    long_description=open('README.md').read(),
    python_requires='>=3.9',
    install_requires=[
        "black>=22.3",
        "click>=8.0",
        "dask>=2022.6.1",
        "flake8>=4.0.1",
        "isort>=5.10.1",
        "numpy>=1.23.0",
        "pandas>=1.4.3",
        "pytest>=7.1.2",
        "scipy>=1.8",
        "timm>=0.9.2",
        "torch>=1.13",
    ],
    entry_points={'console_scripts': ['vlsa=vlsatools.cli:main']},
)
