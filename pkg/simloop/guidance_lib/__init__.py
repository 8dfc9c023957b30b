# This file makes the guidance_lib directory a Python package.
