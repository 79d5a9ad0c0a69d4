"""Eta invariants of Dirac operators on flat tori twisted by unitary maps."""
