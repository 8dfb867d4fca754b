import sys

from ctrplan.cli import main

sys.exit(main())
