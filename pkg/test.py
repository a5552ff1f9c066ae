#!/usr/bin/env python

"""
Run pytest tests for StreamSim.

Usage:

./test.py
    - run all tests

./test.py --cov=streamsim
    - run all tests with coverage report (needs pytest-cov)
"""

import os
import sys

import pytest

sys.dont_write_bytecode = True

# Check that we are running from the root.
root = os.path.abspath(os.getcwd())
assert os.path.exists(os.path.join(root, 'streamsim', 'pipeline_sim.py'))
sys.path.insert(0, root)

# Make sample scenarios and fixtures available
os.environ['STREAMSIM_DATA'] = os.path.join(root, 'doc', 'examples')

pytest_args = ['-v', '--doctest-modules',
               '-o', 'doctest_optionflags=ELLIPSIS NORMALIZE_WHITESPACE',
               ]
pytest_args += sys.argv[1:]  # allow coverage arguments

# Add targets
pytest_args += [os.path.join(root, 'streamsim'), os.path.join(root, 'tests')]

print("pytest " + " ".join(pytest_args))
sys.exit(pytest.main(pytest_args))
