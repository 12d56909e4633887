from meta_prompting.cli import main
import sys

sys.exit(main())
