import sys

from partnermas.cli import main

sys.exit(main())
