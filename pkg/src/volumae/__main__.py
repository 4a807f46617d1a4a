import sys

from volumae.cli import main


sys.exit(main())
