import sys

from memv.cli import main

sys.exit(main())
