"""objrepo: a three-layer digital object repository.

Layers: the structural kernel (opaque typed datastreams inside named
objects), the content-type interface layer (signatures and servlet
pipelines stored in named objects and resolved by URN), and the management
layer (repositories coordinating storage, access control, naming,
replication and migration).
"""

__version__ = "0.1.0"
