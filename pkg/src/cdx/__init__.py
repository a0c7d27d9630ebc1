"""cdx: ADHD classification from rs-fMRI connectivity and phenotypic data."""

__version__ = "0.1.0"
