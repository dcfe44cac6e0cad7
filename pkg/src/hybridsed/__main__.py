import sys

from hybridsed.cli import main

sys.exit(main())
