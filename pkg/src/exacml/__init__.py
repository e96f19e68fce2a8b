"""Fine-grained, obligation-based access control for shared datasets.

Modules: ``policy`` (documents and evaluation), ``pdp`` (per-dataset policy
store), ``datastore`` (embedded tables), ``pep`` (obligations to queries),
``server``, ``proxy``, ``client``, ``cli`` and ``bench``.
"""

__version__ = "0.1.0"
