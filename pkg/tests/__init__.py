# Tests for BranchLab
