import sys

from coupled_syk_sre.cli_io import main

sys.exit(main())
