"""Cartpole swing-up with learned dynamics and adaptive priors."""
