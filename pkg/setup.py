# SPDX-License-Identifier: GPL-3.0-or-later
from setuptools import setup, find_packages


def get_requirements(req_file):
    """
    Get the requirements listed in a requirements file.

    :param str req_file: the path to the requirements file, relative to this file
    :return: the list of requirements
    :rtype: list
    """
    with open(req_file) as fd:
        lines = fd.readlines()

    dependencies = []
    for line in lines:
        dep = line.split('#', 1)[0].strip()
        # Skip blank lines and inclusion of other requirements files
        if dep and not dep.startswith('-r'):
            dependencies.append(dep)
    return dependencies


setup(
    name='canalatlas',
    version='1.0',
    description='Average ear canal shapes and their acoustic input impedance',
    packages=find_packages(include=['canalatlas', 'canalatlas.*']),
    include_package_data=True,
    zip_safe=False,
    # The command line dispatches its work items through the Celery application
    install_requires=(
        get_requirements('requirements.txt') + get_requirements('requirements-workers.txt')
    ),
    entry_points={
        'console_scripts': ['canalatlas=canalatlas.manage:cli'],
    },
    classifiers=[
        'License :: OSI Approved :: GNU General Public License v3 or later (GPLv3+)',
        'Programming Language :: Python :: 3.7',
        'Programming Language :: Python :: 3.8',
        'Topic :: Scientific/Engineering :: Medical Science Apps.',
    ],
    license="GPLv3+",
    python_requires='>=3.7',
)
