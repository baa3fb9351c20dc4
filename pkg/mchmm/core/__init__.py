# Numerical core: domain types, simulation, oracles and moments
