import sys

from recipe_embed.cli import main

sys.exit(main())
