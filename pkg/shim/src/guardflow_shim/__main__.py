import sys

from .harness import serve


def entrypoint() -> None:
    sys.exit(serve())


if __name__ == "__main__":
    entrypoint()
