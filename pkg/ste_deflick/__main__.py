import sys

from ste_deflick.cli import main

sys.exit(main())
