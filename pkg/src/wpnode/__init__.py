"""Weak-penalty neural ODE toolkit."""
