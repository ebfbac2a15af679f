"""Module execution hook: python -m depthfeat <command> ..."""

from .cli import main

if __name__ == "__main__":
    raise SystemExit(main())
