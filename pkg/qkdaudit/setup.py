from setuptools import setup, find_packages

setup(
    name="qkdaudit",
    version="0.1.0",
    package_dir={"": "src"},
    packages=find_packages(where="src"),
    install_requires=[
        'numpy',
        'pandas',
        'py-arkworks-bls12381>=0.3',
        'py_ecc>=7.0',
        'tqdm'
    ],
    entry_points={
        'console_scripts': ['qkdaudit=qkdaudit.cli:main'],
    },
    description="Auditable, topology-hiding path validation for QKD repeater networks",
    python_requires=">=3.8",
)
