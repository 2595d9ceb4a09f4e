import sys

from ascluster.cli import main

sys.exit(main())
