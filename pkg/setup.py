from setuptools import setup, find_packages

setup(
    name="p2pcommunity",
    version="0.1.0",
    packages=find_packages(exclude=["tests", "tests.*"]),
    install_requires=[
        "pandas",
        "numpy",
        "scikit-learn",
        "networkx",
        "plotly",
        "rainflow>=3.0",
        "python-dateutil",
        "tomli; python_version < '3.11'",
    ],
    entry_points={
        "console_scripts": [
            "p2p-community=src.cli:main",
        ],
    },
    python_requires=">=3.9",
)
