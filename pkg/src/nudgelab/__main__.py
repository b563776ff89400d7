"""Library CLI entry point.
"""

from nudgelab import cli

if __name__ == "__main__":
    cli.main()
