"""Prompt material for the language-model roles: planner, feasibility predictor, completeness verifier."""
