"""forktale: branch a linear plot into a full binary interactive story tree.

A plot summary goes in; a chat model is prompted to summarize it into a
storyline tree, imagine the road not taken at every node, write those
storylines, and narrate the result; an Ink script and a game JSON come out.
"""

from .errors import ForktaleError
from .gateway import BackendConfig, Gateway, Mode
from .narrator import Narrator, NodeNarration
from .pipeline import KeyEvent, KeyEvents, MetaPrompt, Pipeline, PipelineConfig
from .tree import (
    BranchingPlotTree,
    DecisionKind,
    END,
    PlotEdge,
    PlotNode,
    StorylinePath,
    enumerate_storylines,
    merge_branch,
    storyline_events,
    validate,
)

__version__ = "1.0.0"

__all__ = [
    "BackendConfig",
    "BranchingPlotTree",
    "DecisionKind",
    "END",
    "ForktaleError",
    "Gateway",
    "KeyEvent",
    "KeyEvents",
    "MetaPrompt",
    "Mode",
    "Narrator",
    "NodeNarration",
    "Pipeline",
    "PipelineConfig",
    "PlotEdge",
    "PlotNode",
    "StorylinePath",
    "enumerate_storylines",
    "merge_branch",
    "storyline_events",
    "validate",
    "__version__",
]
