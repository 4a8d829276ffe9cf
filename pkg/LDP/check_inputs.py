import json
import os

try:
    from LDP.errors import EXIT_CONFIG_ERROR, EXIT_DATA_ERROR
    from LDP.exit_with_error import exit_with_error
except ModuleNotFoundError:
    from errors import EXIT_CONFIG_ERROR, EXIT_DATA_ERROR
    from exit_with_error import exit_with_error

BASE_CHECKPOINT = 'base_model.ckpt'
ADAPTER_CHECKPOINT = 'adapter.ckpt'
VOCAB_FILE = 'vocab.json'


def check_if_exists(input_files, file_logger):
    """
    Function to check that every input file exists and is not empty
    :param input_files: List of file paths
    :param file_logger: Logger that outputs files to log
    :return: None
    """
    file_logger.debug('Check input files: existence and size')
    for file in input_files:
        if not os.path.isfile(file):
            file_logger.error(f'Check input files: {file} does not exist')
            exit_with_error(message=f'Input file {file} does not exist', exit_status=EXIT_DATA_ERROR)
        if os.path.getsize(file) == 0:
            file_logger.error(f'Check input files: {file} is empty')
            exit_with_error(message=f'Input file {file} is empty', exit_status=EXIT_DATA_ERROR)


def read_schema_id(file):
    """
    Schema id of a file from its first line, which is either '# schema=<id>' (tables)
    or a JSON object with a 'schema' key (records, vocabularies and checkpoints).
    :param file: File path
    :return: Schema id or None when the first line carries none
    """
    with open(file, 'rb') as in_file:
        first_line = in_file.readline().decode('utf-8', errors='replace').strip()
    if first_line.startswith('# schema='):
        return first_line[len('# schema='):]
    try:
        header = json.loads(first_line)
    except json.JSONDecodeError:
        return None
    return header.get('schema') if isinstance(header, dict) else None


def check_schema(input_files, schema, file_logger):
    """
    Function to check that input files start with the expected schema line
    :param input_files: List of file paths
    :param schema: Expected schema id, e.g. 'ldp.image_text_pairs/1'
    :param file_logger: Logger that outputs files to log
    :return: None
    """
    check_if_exists(input_files, file_logger)
    for file in input_files:
        found = read_schema_id(file)
        if found != schema:
            file_logger.error(f'Check input files: {file} has schema {found}, expected {schema}')
            exit_with_error(message=f'line 1: {file} is not a {schema} file (found {found})',
                            exit_status=EXIT_DATA_ERROR)
        file_logger.debug(f'Check input files: {file} is a {schema} file')


def check_checkpoint_folder(folder, file_logger, require_adapter=True):
    """
    Function to check that a training output folder holds what later phases load from it
    :param folder: Output folder of 'ldp train'
    :param file_logger: Logger that outputs files to log
    :param require_adapter: Whether an adapter checkpoint must be present
    :return: Dict naming the base checkpoint, adapter checkpoint (or None) and vocabulary paths
    """
    if not os.path.isdir(folder):
        file_logger.error(f'Check inputs: checkpoint folder {folder} does not exist')
        exit_with_error(message=f'Checkpoint folder {folder} does not exist', exit_status=EXIT_CONFIG_ERROR)
    paths = {'base': os.path.join(folder, BASE_CHECKPOINT),
             'adapter': os.path.join(folder, ADAPTER_CHECKPOINT),
             'vocab': os.path.join(folder, VOCAB_FILE)}
    required = ['base', 'vocab'] + (['adapter'] if require_adapter else [])
    missing = [os.path.basename(paths[key]) for key in required if not os.path.isfile(paths[key])]
    if missing:
        file_logger.error(f'Check inputs: {folder} misses {", ".join(missing)}')
        exit_with_error(message=f'Checkpoint folder {folder} misses {", ".join(missing)}',
                        exit_status=EXIT_CONFIG_ERROR)
    if not os.path.isfile(paths['adapter']):
        paths['adapter'] = None
    return paths
