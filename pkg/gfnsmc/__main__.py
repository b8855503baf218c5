import sys

from gfnsmc.cli import main

sys.exit(main())
