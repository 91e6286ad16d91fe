import sys

from brownian_billiards.cli import main

if __name__ == "__main__":
    sys.exit(main())
