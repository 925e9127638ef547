import sys
from typing import List, Optional

from app.cli.router import build_parser
from app.core.event_handlers import command_lifespan
from app.core.exceptions import DVDError

EXIT_FAILURE = 1
EXIT_IO = 3


def exit_code_for(error: BaseException) -> int:
    """Exit code of a failed command; 2 config, 3 I/O or format, 4 missing prerequisite."""
    if isinstance(error, DVDError):
        return error.exit_code
    if isinstance(error, OSError):
        return EXIT_IO
    return EXIT_FAILURE


def _report_failure(error: BaseException) -> int:
    code = exit_code_for(error)
    print(f"dvd: error: {error}", file=sys.stderr)
    return code


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with command_lifespan(args.command) as ctx:
            try:
                args.handler(args, ctx)
            except Exception as e:
                ctx.exit_code = _report_failure(e)
                ctx.logger.error(
                    "command failed",
                    error_type=type(e).__name__,
                    error=str(e),
                    stage=getattr(e, "stage", None),
                    exit_code=ctx.exit_code,
                )
        return ctx.exit_code
    except DVDError as e:
        # Settings could not be loaded, so no lifespan was entered.
        return _report_failure(e)


if __name__ == "__main__":
    sys.exit(main())
