"""Bit-true model of a jammer-mitigating 32x8 MU-MIMO uplink receiver."""
