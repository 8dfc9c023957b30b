# This file makes the simloop directory a Python package.
