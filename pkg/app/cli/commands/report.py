import argparse
from pathlib import Path

from app.core.event_handlers import CommandContext
from app.services.report_service import load_tables, write_report


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("report", help="aggregate results files into tables and charts")
    parser.add_argument("--in", dest="inputs", type=Path, nargs="+", required=True, help="results files or directories")
    parser.add_argument("--out", type=Path, required=True, help="report directory")
    parser.set_defaults(handler=report)


def report(args: argparse.Namespace, ctx: CommandContext) -> None:
    tables = load_tables(args.inputs)
    written = write_report(tables, args.out)
    ctx.logger.info("report written", tables=len(tables), files=len(written))
    print(
        ctx.templates.get_formatted(
            "report_summary", out=args.out, files=", ".join(sorted(p.name for p in written))
        )
    )
