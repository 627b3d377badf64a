"""
Sphinx configuration for the ikd-mil documentation.
"""

import os
import sys

# autodoc imports ikd_mil from the src/ layout
SRC_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), os.pardir, os.pardir, 'src'))
if SRC_DIR not in sys.path:
    sys.path.insert(0, SRC_DIR)

project = 'ikd-mil'
author = 'ikd-mil developers'
release = version = '0.1.0'

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.napoleon',
    'sphinx.ext.viewcode',
]
master_doc = 'index'
exclude_patterns = ['_build']

autodoc_default_options = {
    'members': True,
    'member-order': 'bysource',
    'undoc-members': True,
}
napoleon_google_docstring = True
napoleon_numpy_docstring = False

html_theme = 'sphinx_rtd_theme'
