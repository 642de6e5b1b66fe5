"""Synthetic fixtures, labeled injection and the experiment grid."""
