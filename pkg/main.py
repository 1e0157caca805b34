"""
Entry point for cdebench: ``python main.py <command> ...``.

See ``app.cli`` for the subcommands; ``python main.py serve --model model.json``
starts the HTTP surface.
"""

import sys

from app.cli import main

if __name__ == "__main__":
    sys.exit(main())
