from setuptools import find_packages
from setuptools import setup

setup(
    name="mecanum-sysid",
    description="Differentiable mecanum robot model for friction identification and path following",
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    license="BSD",
    use_scm_version=True,
    packages=find_packages(exclude=["tests", "tests.*"]),
    python_requires=">=3.8",
    setup_requires=["setuptools_scm"],
    install_requires=[
        "baseplate>=2.0.0a1,<3.0",
        "numpy>=1.21,<2.0",
        "pandas>=1.5,<3.0",
        "prometheus-client>=0.12.0,<1.0",
        "scipy>=1.7,<2.0",
        "typing_extensions>=3.10.0.0,<5.0",
    ],
    package_data={"mecanum_sysid": ["py.typed"]},
    entry_points={"console_scripts": ["mecanum-sysid=mecanum_sysid.cli:main"]},
    zip_safe=True,
    classifiers=[
        "Development Status :: 4 - Beta",
        "License :: OSI Approved :: BSD License",
        "Programming Language :: Python",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Topic :: Scientific/Engineering",
    ],
)
