import re
import sys
import warnings

try:
    from LDP.errors import EXIT_DEPENDENCY_ERROR
    from LDP.exit_with_error import exit_with_error
except ModuleNotFoundError:
    from errors import EXIT_DEPENDENCY_ERROR
    from exit_with_error import exit_with_error

MIN_NUMPY_VERSION = (1, 22)
MIN_PYYAML_VERSION = (5, 1)


def version_tuple(version):
    """ '1.26.4' -> (1, 26, 4); non-numeric tails such as 'rc1' are ignored """
    return tuple(int(part) for part in re.findall(r'\d+', version.split('+')[0])[:3])


def check_for_numpy(verbose):
    """
    Function to test presence and version of numpy
    :param verbose: To print or not to print
    :return: Version of numpy if present and tested, else False
    """
    try:
        import numpy
        if verbose:
            print("numpy was successfully found")

        if version_tuple(numpy.__version__) >= MIN_NUMPY_VERSION:
            if verbose:
                print("numpy version is valid")
            return numpy.__version__

        warnings.warn('numpy seems to be an untested version! Make sure it is version = 1.22 or above.')
        return False

    except ModuleNotFoundError as exception:
        warnings.warn("numpy was not found")
        exit_with_error(str(exception), EXIT_DEPENDENCY_ERROR)


def check_for_pyyaml(verbose):
    """
    Function to test presence and version of PyYAML
    :param verbose: To print or not to print
    :return: Version of PyYAML if present and tested, else False
    """
    try:
        import yaml
        if verbose:
            print("PyYAML was successfully found")

        if version_tuple(yaml.__version__) >= MIN_PYYAML_VERSION:
            if verbose:
                print("PyYAML version is valid")
            return yaml.__version__

        warnings.warn('PyYAML seems to be an untested version! Make sure it is version = 5.1 or above.')
        return False

    except ModuleNotFoundError as exception:
        warnings.warn("PyYAML was not found")
        exit_with_error(str(exception), EXIT_DEPENDENCY_ERROR)


def check_dependencies_for_main(verbose=False):
    """
    Function to be called from main of LDP to check the dependencies before running
    :param verbose: To print or not to print
    :return: Versions of packages or False if one of them is an untested version
    """
    numpy_present = check_for_numpy(verbose)

    pyyaml_present = check_for_pyyaml(verbose)

    if all([numpy_present, pyyaml_present]):
        return [numpy_present, pyyaml_present]
    return False


def check_dependencies_only():
    """
    Function to check dependencies, when commandline is given '--check' flag
    :return: Nothing
    """
    print('\n------ Checking dependencies for LDP ------')
    numpy_presence = check_for_numpy(verbose=True)

    pyyaml_presence = check_for_pyyaml(verbose=True)

    print('\n------ Summary of dependency check ------')

    if all([numpy_presence, pyyaml_presence]):
        print("All dependencies were found to be okay! We are ready to go! \n")
    else:
        print("!!! Some dependency does not seem be the correct version, please check the warnings above !!! \n")

    sys.exit(0)
