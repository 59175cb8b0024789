import sys

from .session import serve

if __name__ == "__main__":
    sys.exit(serve())
