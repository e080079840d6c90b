"""Sequential optimal transport for counterfactual mediator profiles."""
