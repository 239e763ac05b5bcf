"""Risk-aware rover path planning over mixtures of class-dependent GP slip models."""
