import sys

from gpmesh.main import main

sys.exit(main())
