import sys

from msgamlss.cli import main

sys.exit(main())
