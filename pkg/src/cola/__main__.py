import sys

from cola.cli import main

sys.exit(main())
