"""
gfnsmc
Amortised sequential samplers trained with SMC and importance-weighted replay
"""
from setuptools import find_packages, setup

short_description = __doc__.split("\n")

try:
    with open("README.md", "r") as handle:
        long_description = handle.read()
except IOError:
    long_description = "\n".join(short_description[2:])


setup(
    name="gfnsmc",
    description=short_description[1],
    long_description=long_description,
    long_description_content_type="text/markdown",
    version="0.1.0",
    license="BSD-3-Clause",
    packages=find_packages(),
    package_data={"gfnsmc": ["data/profiles/*.json", "data/configs/*.json"]},
    include_package_data=True,
    install_requires=["numpy", "scipy", "torch", "pyyaml"],
    entry_points={"console_scripts": ["gfnsmc = gfnsmc.cli:main"]},
    python_requires=">=3.7",
)
