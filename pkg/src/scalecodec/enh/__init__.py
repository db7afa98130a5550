"""Block-based inter coder for the enhancement layer."""
