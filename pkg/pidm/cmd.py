"""
Created on 2026-10-18

@author: wf
"""

# avoid ugly deprecation messages see
# https://stackoverflow.com/questions/879173/how-to-ignore-deprecation-warnings-in-python
# and
import shutup

shutup.please()
import logging
import sys
import traceback
from argparse import ArgumentParser, Namespace, RawDescriptionHelpFormatter

from pidm.version import Version


class BaseCmd(object):
    """
    Baseclass for command line handling
    """

    def __init__(self, version: Version = None, debug: bool = False):
        """
        constructor
        """
        self.version = version if version is not None else Version()
        self.debug = debug
        self.exit_code = 0
        self.args = None

    def getArgParser(self, description: str = None, version_msg=None) -> ArgumentParser:
        """
        Setup command line argument parser

        Args:
            description(str): the description
            version_msg(str): the version message

        Returns:
            ArgumentParser: the argument parser
        """
        if description is None:
            description = self.version.description
        if version_msg is None:
            version_msg = self.program_version_message
        parser = ArgumentParser(description=description, formatter_class=RawDescriptionHelpFormatter)
        parser.add_argument(
            "-a",
            "--about",
            help="show about info [default: %(default)s]",
            action="store_true",
        )
        parser.add_argument(
            "-d",
            "--debug",
            action="store_true",
            help="show debug info [default: %(default)s]",
        )
        parser.add_argument(
            "-v",
            "--verbose",
            action="store_true",
            help="show progress information [default: %(default)s]",
        )
        parser.add_argument("-V", "--version", action="version", version=version_msg)
        return parser

    def setup_logging(self, args: Namespace):
        """
        WARNING by default, INFO when verbose and DEBUG when debugging
        """
        level = logging.WARNING
        if getattr(args, "verbose", False):
            level = logging.INFO
        if getattr(args, "debug", False):
            level = logging.DEBUG
        logging.basicConfig(
            level=level,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
            force=True,
        )

    def handle_args(self) -> bool:
        """
        handle the common arguments

        Returns:
            bool: True if the arguments have been handled completely
        """
        handled = False
        self.setup_logging(self.args)
        if self.args.about:
            print(self.program_version_message)
            print(self.version.longDescription)
            print(f"see {self.version.doc_url}")
            handled = True
        return handled

    def cmd_parse(self, argv: list = None):
        """
        parse the argument lists and prepare

        Args:
            argv(list): list of command line arguments

        """
        if argv is None:
            argv = sys.argv[1:]
        self.argv = argv
        self.program_name = self.version.name
        self.program_version = f"v{self.version.version}"
        self.program_build_date = str(self.version.date)
        self.program_version_message = f"{self.program_name} ({self.program_version},{self.program_build_date})"
        self.parser = self.getArgParser(
            description=self.version.description,
            version_msg=self.program_version_message,
        )
        self.args = self.parser.parse_args(argv)
        return self.args

    def error_line(self, ex: BaseException) -> str:
        """
        the one-line machine-parsable error report
        """
        message = " ".join(str(ex).split())
        return f"{self.version.name}: {type(ex).__name__}: {message}"

    def cmd_main(self, argv: list = None) -> int:
        """
        main program as an instance

        Args:
            argv(list): list of command line arguments

        Returns:
            int: exit code - 0 of all went well 1 for keyboard interrupt and 2 for exceptions
        """
        try:
            self.cmd_parse(argv)
            if len(self.argv) < 1:
                self.parser.print_usage()
                return 1
            self.handle_args()
        except KeyboardInterrupt:
            ### handle keyboard interrupt ###
            self.exit_code = 1
        except Exception as e:
            if self.debug:
                raise (e)
            sys.stderr.write(self.error_line(e) + "\n")
            if self.args is not None and self.args.debug:
                sys.stderr.write(traceback.format_exc())
            self.exit_code = 2

        return self.exit_code
