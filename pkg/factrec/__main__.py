import sys

from factrec.cli import main

sys.exit(main())
