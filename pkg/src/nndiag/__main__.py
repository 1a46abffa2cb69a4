import sys

from nndiag.cli import main

sys.exit(main())
