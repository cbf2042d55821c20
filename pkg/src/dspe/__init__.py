"""Bit-exact simulator of the DSPE edge-inference datapath."""
