import sys

from sparrowlab.cli import main

sys.exit(main())
