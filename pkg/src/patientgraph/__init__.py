"""Graph-assisted prompting for dialogue-based medication recommendation."""
