#! python3

"""Python script for generating data, training and evaluating cross-view detectors."""

import sys

from crossview.cli import main

if __name__ == "__main__":
    sys.exit(main())
