"""
Support files for the application.

This includes tools to help with testing, documentation and command line
parsing which are specific to this application, rather than general
utilities.
"""
import os


def get_data_path():
    """
    Locate the examples directory.
    """
    # Check for data path in the environment
    key = 'STREAMSIM_DATA'
    if key in os.environ:
        path = os.environ[key]
        if not os.path.isdir(path):
            raise RuntimeError('Path in environment %s not a directory' % key)
        return path

    # Check for data next to the package.
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    return os.path.join(root, 'doc', 'examples')


_REGISTRY = {
    # Sample scenarios, profiles and fixtures used by demos and doctests.
    # Each line looks like:
    #
    #     'dataset': ['subdirectory', 'filename'],
    #
    'streaming_480p': ['scenarios', 'streaming_480p.txt'],
    'auto_batch': ['scenarios', 'auto_batch.txt'],
    'measured_blocks': ['scenarios', 'measured_blocks.txt'],
    'motion_context': ['scenarios', 'motion_context.txt'],
    'infeasible': ['scenarios', 'infeasible.txt'],
    'skewed_blocks.csv': ['profiles', 'skewed_blocks.csv'],
    'wan-1.3b-h100': ['fixtures', 'wan-1.3b-h100.txt'],
    }


def sample_data(name):
    """Full path of the sample dataset *name*."""
    examples = get_data_path()
    if name in _REGISTRY:
        return os.path.join(examples, *_REGISTRY[name])
    raise ValueError("Sample dataset %s not available" % name)


def resolve(name):
    """
    Path of a scenario given as a file name or a sample dataset name.
    Existing files win over sample names.
    """
    if os.path.exists(name) or name not in _REGISTRY:
        return name
    return sample_data(name)
