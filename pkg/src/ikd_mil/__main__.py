import sys

from ikd_mil.cli import main

sys.exit(main())
