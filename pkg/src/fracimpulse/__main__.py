import sys

from fracimpulse.cli import main

sys.exit(main())
