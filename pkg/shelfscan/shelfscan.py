#!/usr/bin/env python

"""
shelfscan
~~~~~~~~~

:license: MIT, see LICENSE for more details.
"""

from typing import List, Optional

from shelfscan.engine.interface import Fetcher
from shelfscan.utils.terminal import Terminal


def main(argv: Optional[List[str]] = None) -> None:
    """Main function for parsing, handling and running command-line arguments.

    Args:
        argv (List[str], optional): Arguments instead of `sys.argv`.
    """

    # Define & Parse command-line options
    args = Terminal.parse(argv)

    Fetcher.set_ua_product_name(Fetcher.UA_CLI)
    Terminal.silent = bool(getattr(args, "silent", False))
    if getattr(args, "verbose", False):
        Terminal.enable_verbose()

    if args.command == "extract":
        Terminal.extract(image=args.image, output=args.out, config=args.config)

    elif args.command == "detect":
        Terminal.detect(
            scene=args.scene,
            patterns=args.pattern,
            output=args.out,
            config=args.config,
            debug_dir=args.debug_dir,
        )

    elif args.command == "bench":
        Terminal.bench(suite=args.suite, output=args.out, config=args.config)

    elif args.command == "synth":
        Terminal.synth(suite=args.suite, output_dir=args.out_dir)

    # Write config options to the global user config file
    elif args.command == "config":
        Terminal.config(assignments=args.assignments, show=args.show)

    Terminal.exit(Terminal.EX_SUCCESSFUL)


if __name__ == "__main__":
    main()
