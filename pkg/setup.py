from setuptools import setup, find_packages

setup(
    name="simloop",
    version="1.0.0",
    packages=find_packages(exclude=["benchmarks"]),
    package_data={
        "simloop": ["default_config.json", "materials_table.json"],
    },
    entry_points={
        'console_scripts': [
            'simloop=simloop.cli:main',
        ],
    },
    install_requires=[
        "numpy",
        "scipy",
        "opencv-python",
        "plyfile",
        "tqdm",
        "colorama",
    ],
)
