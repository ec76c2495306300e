import sys
from typing import List, Optional

import structlog

from app.cli.commands import dispatch, parse_args
from app.config.logging_config import configure_logging
from app.errors import AidError

logger = structlog.get_logger(__name__)


def main(argv: Optional[List[str]] = None) -> int:
    """
    Command line entry point

    Args:
        argv: Arguments without the program name, defaults to sys.argv[1:]

    Returns:
        Process exit code: 0 success, 2 I/O, 3 validation, 4 evaluation
    """
    args = parse_args(argv)
    configure_logging(args.log_level, args.log_format)

    try:
        return dispatch(args)
    except AidError as e:
        logger.error("command_failed", command=args.command, error=str(e), exit_code=e.exit_code)
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
