"""ODE solver, policy reconstruction and verifiers."""
