import sys

from mecanum_sysid.cli import main

sys.exit(main())
