#!/usr/bin/env python

"""
shelfscan
~~~~~~~~~

:license: MIT, see LICENSE for more details.
"""

from setuptools import setup


setup()
