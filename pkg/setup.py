# The MIT License (MIT)
# Copyright © 2024 jerseyid developers

# Permission is hereby granted, free of charge, to any person obtaining a copy of this software and associated
# documentation files (the “Software”), to deal in the Software without restriction, including without limitation
# the rights to use, copy, modify, merge, publish, distribute, sublicense, and/or sell copies of the Software,
# and to permit persons to whom the Software is furnished to do so, subject to the following conditions:

# The above copyright notice and this permission notice shall be included in all copies or substantial portions of
# the Software.

# THE SOFTWARE IS PROVIDED “AS IS”, WITHOUT WARRANTY OF ANY KIND, EXPRESS OR IMPLIED, INCLUDING BUT NOT LIMITED TO
# THE WARRANTIES OF MERCHANTABILITY, FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL
# THE AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER LIABILITY, WHETHER IN AN ACTION
# OF CONTRACT, TORT OR OTHERWISE, ARISING FROM, OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER
# DEALINGS IN THE SOFTWARE.

import os
import re

from setuptools import find_packages, setup

HERE = os.path.abspath(os.path.dirname(__file__))


def read_requirements(name):
    with open(os.path.join(HERE, name), "r") as f:
        return [line.strip() for line in f if line.strip() and not line.startswith("#")]


def read_version():
    with open(os.path.join(HERE, "jerseyid", "__init__.py"), encoding="utf-8") as f:
        match = re.search(r"^__version__ = ['\"]([^'\"]*)['\"]", f.read(), re.M)
    if match is None:
        raise RuntimeError("jerseyid/__init__.py does not define __version__")
    return match.group(1)


with open(os.path.join(HERE, "README.md"), encoding="utf-8") as f:
    long_description = f.read()

setup(
    name="jerseyid",
    version=read_version(),
    description="Jersey number recognition for hockey player tracklets with weak frame labels and shift-data masking",
    long_description=long_description,
    long_description_content_type="text/markdown",
    author="jerseyid developers",
    packages=find_packages(exclude=["tests", "tests.*"]),
    license="MIT",
    python_requires=">=3.9",
    install_requires=read_requirements("requirements.txt"),
    entry_points={"console_scripts": ["jerseyid = jerseyid.cli:main"]},
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3 :: Only",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Topic :: Scientific/Engineering :: Image Recognition",
    ],
)
