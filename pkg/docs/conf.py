# -*- coding: utf-8 -*-
#
# Configuration file for the Sphinx documentation builder.
#
# This file does only contain a selection of the most common options. For a
# full list see the documentation:
# http://www.sphinx-doc.org/en/stable/config

# -- Path setup --------------------------------------------------------------

import os
import sys

sys.path.insert(0, os.path.abspath(".."))

# -- Project information -----------------------------------------------------

project = "gfnsmc"
copyright = "2026, the gfnsmc developers"
author = "the gfnsmc developers"

# The short X.Y version
version = "0.1"
# The full version, including alpha/beta/rc tags
release = "0.1.0"

# -- General configuration ---------------------------------------------------

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.napoleon",
    "sphinx.ext.autosummary",
    "sphinx.ext.autosectionlabel",
    "sphinx.ext.mathjax",
    "sphinx.ext.viewcode",
    "sphinx.ext.intersphinx",
]

autosummary_generate = True
autodoc_default_flags = ["members", "inherited-members"]
autodoc_member_order = "bysource"  # preserve ordering in source
autodoc_mock_imports = [
    "torch",
    "scipy",
    "yaml",
]

autosectionlabel_maxdepth = 3
autosectionlabel_prefix_document = True

suppress_warnings = [
    "autosectionlabel.releasehistory",
]

source_suffix = [".rst", ".md"]
master_doc = "index"
language = None
exclude_patterns = ["_build", "Thumbs.db", ".DS_Store"]
pygments_style = "sphinx"

# -- Options for HTML output -------------------------------------------------

html_theme = "sphinx_rtd_theme"
html_theme_options = {"prev_next_buttons_location": None, "sticky_navigation": False}
htmlhelp_basename = "gfnsmcdoc"

# -- Options for LaTeX output ------------------------------------------------

latex_documents = [
    (master_doc, "gfnsmc.tex", "gfnsmc Documentation", "gfnsmc", "manual"),
]

# -- Options for manual page output ------------------------------------------

man_pages = [(master_doc, "gfnsmc", "gfnsmc Documentation", [author], 1)]

# -- Extension configuration -------------------------------------------------

intersphinx_mapping = {
    "python": ("https://docs.python.org/", None),
    "numpy": ("https://numpy.org/doc/stable/", None),
    "torch": ("https://pytorch.org/docs/stable/", None),
}
