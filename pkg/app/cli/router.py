import argparse

from app.cli.commands import bench, data, plan, report, train

COMMAND_MODULES = (data, train, plan, bench, report)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dvd",
        description="Learn demo-conditioned rewards from human and robot videos and plan with them.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="command")
    for module in COMMAND_MODULES:
        module.register(subparsers)
    return parser
