"""Neural elasto-viscoplastic constitutive models trained through an implicit
material-point solver with a small reverse-mode autodiff tape."""

__version__ = "0.1.0"
