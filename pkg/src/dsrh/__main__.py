import sys

from dsrh.cli import main

sys.exit(main())
