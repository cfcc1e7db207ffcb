#!/usr/bin/env python3
'''
Command-line launcher for the STC-MixHop fraud screening pipeline.

Usage:
    python stc_mixhop.py --out-dir runs/gen gen --regime structure
    python stc_mixhop.py --out-dir runs/store build-graph --input runs/gen/transactions.csv
    python stc_mixhop.py --out-dir runs/full train --store runs/store/store
'''

import sys
sys.path.insert(0, 'src')

from cli import main


if __name__ == "__main__":
    sys.exit(main())
