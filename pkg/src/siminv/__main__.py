import sys

from siminv.harness.cli import main

sys.exit(main())
