"""
Run the servecast command line

> python -m servecast analyze --hardware A100-80G --devices 8 --model LLaMA-2-70B --workload 512:1024
"""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
