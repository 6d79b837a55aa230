# BranchLab: interacting branching diffusions and their mean-field limit
__version__ = "1.0.0"
