"""Run: python -m hjmcal"""
from .cli import main

raise SystemExit(main())
