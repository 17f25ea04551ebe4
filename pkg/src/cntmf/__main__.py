import sys

from cntmf.cli import main

sys.exit(main())
