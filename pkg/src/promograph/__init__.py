"""promograph: app-promotion graph collection, malware detection, and
promotion-mechanism inference.

Subpackages are imported lazily by the CLI; import the modules you need:

    from promograph import graph, records, adsim, explorer
    from promograph import features, embed, detect, pig, pathinfer, stats
"""

__version__ = "0.1.0"

from .graph import AdKind, AppClass, PromotionEdge, PromotionGraph  # noqa: F401
