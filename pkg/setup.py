# vim: set tabstop=4 expandtab :
###############################################################################
#   Copyright (c) 2025 The ghzenc developers
#
#   Licensed under the Apache License, Version 2.0 (the "License");
#   you may not use this file except in compliance with the License.
#   You may obtain a copy of the License at
#
#       http://www.apache.org/licenses/LICENSE-2.0
#
#   Unless required by applicable law or agreed to in writing, software
#   distributed under the License is distributed on an "AS IS" BASIS,
#   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#   See the License for the specific language governing permissions and
#   limitations under the License.
###############################################################################

import os
from datetime import date

import setuptools

build_version = os.environ.get('BUILD_VERSION')
if build_version is None:
    build_version = f'{date.today().strftime("%Y%m%d")}'


# ----------------------------------------------------------------------------------------------------------------------
shared_classifiers = [
                  "Environment :: Console",
                  "License :: OSI Approved :: Apache Software License",
                  "Intended Audience :: Science/Research",
                  "Topic :: Scientific/Engineering :: Physics"
              ]

shared_install_requires = [
                       "numpy>=1.24",
                       "scipy>=1.10",
                       "psutil",
                   ]

shared_tests_require = [
                       "pytest",
                       "pytest-cov",
                       "pytest-instafail",
                   ]


def setup_ghzenc():
    setuptools.setup(
        name="ghzenc",
        version=build_version,
        description="Fast GHZ state encoding simulated on the Dicke manifold",
        long_description="",
        long_description_content_type="text/markdown",
        packages=['ghzenc'],
        data_files=[],
        platforms=[],
        include_package_data=False,
        classifiers=shared_classifiers,
        install_requires=shared_install_requires,
        extras_require={'test': shared_tests_require},
        python_requires='>=3.10',
        entry_points={
            'console_scripts': [
                'ghzenc = ghzenc.cli:main',
            ],
        }
    )


setup_ghzenc()
