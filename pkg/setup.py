from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

with open("requirements.txt", "r", encoding="utf-8") as fh:
    requirements = [line.strip() for line in fh if line.strip() and not line.startswith("#")]

setup(
    name="mvs-triangulate",
    version="0.1.0",
    description="Multi-view interest point matching, differentiable triangulation and sparse depth, with a CLI and an MCP server",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(include=["cli*", "config*", "mcp_server*", "pipeline*", "utils*"]),
    package_data={"mcp_server": ["*.json"]},
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Topic :: Scientific/Engineering :: Image Recognition",
    ],
    python_requires=">=3.9",
    install_requires=requirements,
    extras_require={
        "dev": [
            "setuptools>=80.9.0",
            "pytest>=7.0",
        ],
    },
    entry_points={
        "console_scripts": [
            "mvs-tri=cli.main:main",
            "mvs-tri-mcp=mcp_server.mcp_server:main",
        ],
    },
    keywords="multi-view-stereo triangulation depth interest-points mcp",
)
