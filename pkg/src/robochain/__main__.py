import sys

from robochain.harness import main

sys.exit(main())
