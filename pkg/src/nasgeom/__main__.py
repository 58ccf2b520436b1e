import sys

from nasgeom.cli import main

sys.exit(main())
