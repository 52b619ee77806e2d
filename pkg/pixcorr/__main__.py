"""Allow running the package as `python -m pixcorr`."""

from .cli import main

main()
