"""Shell-lattice stiffness homogenization and thickness-isotropy optimization."""

__version__ = "0.1.0"
