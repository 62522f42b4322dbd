"""Compile binary decision trees into logical decision machines and relax them."""
from importlib import resources

from .analysis import (
    StructureReport,
    audit,
    exact_rank,
    isomorphic,
    reconstruct,
    sibling_pairs,
    subtree_template,
)
from .compiler import (
    DecisionMachine,
    FeatureTransform,
    augment,
    compile_tree,
    compile_with_categorical,
    expand_categorical,
    normalized_row_similarity_basis,
)
from .inference import (
    CombinedMachine,
    Forest,
    SimilarityScore,
    combine_block,
    decide,
    decide_batch,
    forest_predict,
    logical_similarity,
    predict,
    predict_batch,
    predict_delta,
    sgn_modified,
)
from .soft import (
    Expert,
    SelectionPredictionModel,
    SoftConfig,
    activate,
    attention_eval,
    finite_difference_check,
    glm_tree_predict,
    soft_decide,
    soft_predict,
    soft_scores,
    sp_predict,
)
from .tree import DecisionTree, RandomTreeConfig, TreeError, parse_tree, random_tree, traverse

__version__ = "0.1.0"


def tree1() -> DecisionTree:
    """The six-leaf, five-test example tree shipped with the package."""
    return parse_tree(resources.files(__package__).joinpath("data/tree1.json").read_text())
