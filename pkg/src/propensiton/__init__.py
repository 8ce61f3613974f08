"""Wave-packet simulator for channel-triggered probabilistic collapse.

Submodules:

* :mod:`numerics`: grids, wavefunctions, transforms, packets
* :mod:`dynamics`: Hamiltonians, propagators, bound states, dense oracle
* :mod:`channels`: channel decomposition, asymptotic fidelities, collapse
* :mod:`experiments`: scattering, decay, plate and sphere-toy drivers
* :mod:`ensemble`: reproducible trajectory ensembles and statistics
* :mod:`cli`: configuration, orchestration and output files
"""
__version__ = "0.1.0"
