"""Path simulation of the optimally controlled system."""
