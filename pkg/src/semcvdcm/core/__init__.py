"""Model core: parameters, utilities, choice probabilities, losses and fit metrics."""
