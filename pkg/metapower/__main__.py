import sys

from metapower.cli import main


sys.exit(main())
