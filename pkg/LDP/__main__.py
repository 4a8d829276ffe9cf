'''
Module      : Main
Description : The main entry point for the program.
License     : MIT
Portability : POSIX

The program runs one stage of the report-generation pipeline per call: corpus
preparation, adapter training, evaluation, efficiency accounting, ablations or
expert score aggregation. Every stage writes its outputs, a log and a run
manifest into the output folder.
'''

import warnings
import os
import time
import logging
from sys import argv
from importlib.metadata import PackageNotFoundError, version

try:
    from LDP.commandline_interface import get_commandline_arguments
except ModuleNotFoundError:
    from commandline_interface import get_commandline_arguments

try:
    from LDP.check_depencies import check_dependencies_for_main
except ModuleNotFoundError:
    from check_depencies import check_dependencies_for_main

try:
    from LDP.exit_with_error import exit_with_error
except ModuleNotFoundError:
    from exit_with_error import exit_with_error

try:
    from LDP.errors import LdpError
except ModuleNotFoundError:
    from errors import LdpError

try:
    from LDP.pipeline_config import load_config
except ModuleNotFoundError:
    from pipeline_config import load_config

try:
    from LDP.pipeline_commands import COMMANDS
except ModuleNotFoundError:
    from pipeline_commands import COMMANDS

PROGRAM_NAME = "LDP"


try:
    PROGRAM_VERSION = version(PROGRAM_NAME)
except PackageNotFoundError:
    PROGRAM_VERSION = "undefined_version"


def init_logging(debug_log, quiet, out_path):
    """
    initialise the logging file, and write log statement
    indicating the program has started, and also write out the
    command line from sys.argv
    :param debug_log: Bool indicating if log is a debug log
    :param quiet: Bool indicating if logging should be kept minimal
    :param out_path: Output path for the program, and where log will be placed
    :return: Logger object
    """
    if debug_log:
        level = logging.DEBUG
    elif quiet:
        level = logging.WARNING
    else:
        level = logging.INFO

    # Construct logger logging to file
    file_logger = logging.getLogger(__name__)
    file_logger.setLevel(level)

    formatter = logging.Formatter('[%(asctime)s] %(levelname)s - %(module)s - %(message)s',
                                  datefmt="%Y-%m-%dT%H:%M:%S%z")

    file_handler = logging.FileHandler(os.path.join(out_path, 'LDP.log'))
    file_handler.setLevel(level)
    file_handler.setFormatter(formatter)
    file_logger.addHandler(file_handler)

    # Log command-line argument and debug line for LDP start
    file_logger.info(f"command line: {' '.join(argv)}")

    return file_logger


def stream_logging(file_logger, quiet=False):
    """
    Function adding in stream logging following initial logging
    :param file_logger: Logger object
    :param quiet: Bool indicating if only warnings should reach the terminal
    :return: Logger object with added stream logging
    """
    stream_handler = logging.StreamHandler()
    stream_handler.setLevel(logging.WARNING if quiet else logging.INFO)

    file_logger.addHandler(stream_handler)

    file_logger.info('Processing started')

    return file_logger


def close_logging(file_logger):
    for handler in list(file_logger.handlers):
        handler.close()
        file_logger.removeHandler(handler)


def main():
    """
    This is the main function for running LDP. A subcommand is required: prep, train, eval, efficiency, ablate or score
    """
    start_time = time.time()

    # Retrieve the flags given by the user in the commandline
    cmd_args = get_commandline_arguments(argv[1:], PROGRAM_VERSION)

    # Try to construct the output folder and except if it does exist
    try:
        os.makedirs(cmd_args.out_path)
    except FileExistsError:
        warnings.warn("Output folder already exists")

    # Orchestrate the execution of the program
    file_logger = init_logging(cmd_args.log, cmd_args.quiet, cmd_args.out_path)

    # Check dependencies for LDP and logging of versions to file
    dependencies_return = check_dependencies_for_main(verbose=False)
    if dependencies_return:
        file_logger.info("Dependency versions:")
        dependencies = ['numpy', 'PyYAML']
        for name, dependency_version in zip(dependencies, dependencies_return):
            file_logger.info(f'{name} v.{dependency_version}')
    else:
        file_logger.warning("Some dependencies are untested version(s)")

    file_logger = stream_logging(file_logger, cmd_args.quiet)

    try:
        config = load_config(cmd_args.config, cmd_args.seed, getattr(cmd_args, 'prompt', None))
        manifest_path = COMMANDS[cmd_args.command](cmd_args, config, file_logger)
    except LdpError as error:
        file_logger.exception(f'{cmd_args.command} failed')
        close_logging(file_logger)
        exit_with_error(str(error), error.exit_status)
    file_logger.info(f'Run manifest: {manifest_path}')

    time_to_finish = time.time() - start_time
    time_to_finish = int(round(time_to_finish, 0))
    file_logger.info(f"LDP {cmd_args.command} completed in: {time_to_finish//60} minutes {time_to_finish%60} Seconds")
    close_logging(file_logger)


if __name__ == '__main__':
    main()
