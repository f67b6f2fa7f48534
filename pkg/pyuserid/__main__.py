import sys

from pyuserid.cli import cli

if __name__ == '__main__':
    sys.exit(cli(sys.argv[1:]))
