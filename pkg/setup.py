import setuptools

with open("README.md", "r", encoding="utf-8") as f:
    long_description = f.read()


__version__ = "0.1.0"

REPO_NAME = "cf-sfl"
SRC_REPO = "CFSFL"


setuptools.setup(
    name=SRC_REPO,
    version=__version__,
    description="Collaborative filtering with a synthetic feedback loop",
    long_description=long_description,
    long_description_content_type="text/markdown",
    python_requires=">=3.8",
    package_dir={"": "src"},
    packages=setuptools.find_packages(where="src"),
    install_requires=[
        "numpy",
        "scipy",
        "pandas>=1.5",
        "matplotlib",
        "python-box",
        "pyYAML",
        "ensure",
        "joblib",
        "tqdm",
    ],
    entry_points={"console_scripts": ["cfsfl=CFSFL.cli:main"]},
)
