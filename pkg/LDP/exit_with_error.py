import sys
import logging
import shutil


def exit_with_error(message, exit_status, tmp_folder=None):
    """
    Print an error message to stderr, prefixed by the program name and 'ERROR'.
    Then exit program with supplied exit status.
    :param message: Message to give the user upon exit
    :param exit_status: Status returned as exit status
    :param tmp_folder: Temporary working folder of LDP to be deleted before exiting
    :return: None
    """
    if tmp_folder is not None:
        shutil.rmtree(tmp_folder, ignore_errors=True)

    logging.getLogger('LDP.__main__').error(message)
    print(f"LDP ERROR: {message}, exiting", file=sys.stderr)
    sys.exit(exit_status)
