"""Model-free restoration baselines."""
