import sys

from iogrammar.cli import main

sys.exit(main())

#EOF
