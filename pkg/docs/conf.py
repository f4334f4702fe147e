#
# mcfa documentation build configuration file.
#
# This file is imported with the current directory set to its
# containing dir.

# -- General configuration ------------------------------------------------

extensions = [
    'sphinx.ext.todo',
    'sphinx.ext.mathjax',
]

templates_path = ['_templates']

source_suffix = '.rst'

# The master toctree document.
master_doc = 'index'

# General information about the project.
project = 'mcfa'
copyright = '2026, Carton He and Contributors'
author = 'Carton He and Contributors'

# The short X.Y version.
version = '0.1'
# The full version, including alpha/beta/rc tags.
release = '0.1.0'

language = 'en'

exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']

pygments_style = 'sphinx'

todo_include_todos = True


# -- Options for HTML output ----------------------------------------------

html_theme = 'sphinx_rtd_theme'

html_static_path = []

htmlhelp_basename = 'mcfadoc'

# -- Options for LaTeX output ---------------------------------------------

latex_elements = {}

latex_documents = [
    (master_doc, 'mcfa.tex', 'mcfa Documentation', author, 'manual'),
]

# -- Options for manual page output ---------------------------------------

man_pages = [
    (master_doc, 'mcfa', 'mcfa Documentation', [author], 1)
]
