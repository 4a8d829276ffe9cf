import argparse
import sys
try:
    from LDP.alignment import PHASES
    from LDP.check_depencies import check_dependencies_only
    from LDP.clinical_eval import SCORE_SHEET_COLUMNS
    from LDP.errors import EXIT_CONFIG_ERROR
    from LDP.pipeline_config import PS_MODES
    from LDP.seed_handling import parse_seed
    from LDP.tokenizer import PROMPT_PRESETS
except ModuleNotFoundError:
    from alignment import PHASES
    from check_depencies import check_dependencies_only
    from clinical_eval import SCORE_SHEET_COLUMNS
    from errors import EXIT_CONFIG_ERROR
    from pipeline_config import PS_MODES
    from seed_handling import parse_seed
    from tokenizer import PROMPT_PRESETS


def positive_int(value):
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f'expected a positive integer, got {value}')
    return number


def run_options():
    """ Flags shared by every subcommand """
    parent = argparse.ArgumentParser(add_help=False)

    parent.add_argument('--config',
                        help='Give a YAML pipeline config [default: built-in defaults, see LDP/data/default_config.yaml]',
                        required=False,
                        metavar='config.yaml',
                        default=None,
                        dest='config')

    parent.add_argument('--seed',
                        help='Seed of the run, overrides the config file [default: seed of the config]',
                        required=False,
                        metavar='u64',
                        type=parse_seed,
                        default=None,
                        dest='seed')

    # Add the flag for the output folder
    parent.add_argument('-o',
                        '--out',
                        '--output_folder',
                        help='Give path to output folder [default: current folder]',
                        required=False,
                        metavar='path/to/output',
                        default='.',
                        dest='out_path')

    # Add the flag to control max CPUs
    parent.add_argument('-c',
                        '--cpu',
                        help='Give max number of CPUs [default: 1]',
                        required=False,
                        metavar='int',
                        default=1,
                        type=positive_int,
                        dest='cpu')

    logger_level = parent.add_mutually_exclusive_group()
    logger_level.add_argument('-l',
                              '--log',
                              help='Record program progress in for debugging purpose',
                              action='store_true',
                              default=False,
                              required=False)

    logger_level.add_argument('-q',
                              '--quiet',
                              help='Only print warnings',
                              action='store_true',
                              default=False,
                              required=False)
    return parent


def get_commandline_arguments(args, version):
    """
    Command line interface for LDP.
    Will print help message and exit upon no input, -help, and check dependencies and exit, upon --check
    :param args: Arguments given on command-line by user
    :param version: Current version of LDP
    :return: Object containing passed arguments
    """
    # Set up parser
    parser = argparse.ArgumentParser(prog='ldp',
                                     description='Welcome to LDP!\n '
                                                 'This program prepares endoscopy image-report corpora, fine-tunes a '
                                                 'micro multimodal report generator with low-rank adapters and '
                                                 'preference alignment, and evaluates the generated reports.')
    parent = run_options()
    subparsers = parser.add_subparsers(dest='command', metavar='{prep,train,eval,efficiency,ablate,score}')

    prep = subparsers.add_parser('prep', parents=[parent],
                                 help='Keyframe sampling, cleaning, alignment and train/test split')
    prep.add_argument('--frames',
                      help='Give the frame sequences file [default: generate a synthetic corpus]',
                      required=False,
                      metavar='frames.jsonl',
                      dest='frames')
    prep.add_argument('--spans',
                      help='Give the sentence spans file belonging to --frames',
                      required=False,
                      metavar='spans.jsonl',
                      dest='spans')

    train = subparsers.add_parser('train', parents=[parent], help='Train one phase: sft, dpo, simpo or orpo')
    train.add_argument('--phase',
                       help='Training phase [default: sft]',
                       choices=PHASES,
                       default='sft',
                       dest='phase')
    train.add_argument('--corpus',
                       help='Give the training image-text pairs (train_pairs.jsonl of ldp prep)',
                       required=True,
                       metavar='train_pairs.jsonl',
                       dest='corpus')
    train.add_argument('--checkpoint',
                       help='Output folder of an earlier ldp train run to continue from (required for dpo)',
                       required=False,
                       metavar='path/to/checkpoint',
                       dest='checkpoint')
    train.add_argument('--prompt',
                       help='Prompt preset, overrides eval.prompt of the config',
                       choices=PROMPT_PRESETS,
                       default=None,
                       dest='prompt')
    train.add_argument('--merge',
                       help='Also write a checkpoint with the adapters merged into the base weights',
                       action='store_true',
                       default=False,
                       dest='merge')

    evaluate = subparsers.add_parser('eval', parents=[parent], help='Generate and score reports')
    evaluate.add_argument('--checkpoint',
                          help='Output folder of an ldp train run',
                          required=False,
                          metavar='path/to/checkpoint',
                          dest='checkpoint')
    evaluate.add_argument('--test',
                          help='Give the test image-text pairs (test_pairs.jsonl of ldp prep)',
                          required=False,
                          metavar='test_pairs.jsonl',
                          dest='test')
    evaluate.add_argument('--eval_corpus',
                          help='Score a pre-generated {id, hypothesis, references} corpus instead of a checkpoint',
                          required=False,
                          metavar='corpus.jsonl',
                          dest='eval_corpus')
    evaluate.add_argument('--score_sheet',
                          help='Expert score sheet filling the PS column',
                          required=False,
                          metavar='scores.tsv',
                          dest='score_sheet')
    evaluate.add_argument('--prompt',
                          help='Prompt preset used for generation, overrides eval.prompt of the config',
                          choices=PROMPT_PRESETS,
                          default=None,
                          dest='prompt')
    evaluate.add_argument('--label',
                          help='Row label in the metric table [default: checkpoint folder and prompt]',
                          required=False,
                          dest='label')

    efficiency = subparsers.add_parser('efficiency', parents=[parent], help='Trainable parameter accounting')
    efficiency.add_argument('--ranks',
                            help='LoRA ranks to account for [default: lora.rank of the config]',
                            nargs='+',
                            type=positive_int,
                            metavar='int',
                            dest='ranks')
    efficiency.add_argument('--base_params',
                            help='Parameter count of an external base model, e.g. 7.0e9',
                            type=float,
                            metavar='float',
                            dest='base_params')
    efficiency.add_argument('--trainable_params',
                            help='Trainable parameter count of the external setup, e.g. 8.4e6',
                            type=float,
                            metavar='float',
                            dest='trainable_params')

    ablate = subparsers.add_parser('ablate', parents=[parent], help='Rank, phase or data-fraction ablations')
    ablate.add_argument('--corpus',
                        help='Give the training image-text pairs',
                        required=True,
                        metavar='train_pairs.jsonl',
                        dest='corpus')
    ablate.add_argument('--test',
                        help='Give the test image-text pairs',
                        required=True,
                        metavar='test_pairs.jsonl',
                        dest='test')
    variants = ablate.add_mutually_exclusive_group(required=True)
    variants.add_argument('--ranks',
                          help='LoRA ranks to compare, e.g. 8 16 32 64',
                          nargs='+',
                          type=positive_int,
                          metavar='int',
                          dest='ranks')
    variants.add_argument('--phases',
                          help='Phases to compare after a shared SFT run, e.g. sft dpo simpo orpo',
                          nargs='+',
                          choices=PHASES,
                          dest='phases')
    variants.add_argument('--fractions',
                          help='Fractions of the training split to train on, e.g. 0.2 0.5 1.0',
                          nargs='+',
                          type=float,
                          metavar='float',
                          dest='fractions')

    score = subparsers.add_parser('score', parents=[parent], help='Physician Score and inter-rater agreement')
    score.add_argument('--score_sheet',
                       help=f'Tab separated score sheet with columns {", ".join(SCORE_SHEET_COLUMNS)}',
                       required=True,
                       metavar='scores.tsv',
                       dest='score_sheet')
    score.add_argument('--mode',
                       help='Headline aggregate [default: eval.ps_mode of the config]',
                       choices=PS_MODES,
                       default=None,
                       dest='mode')

    parser.add_argument('--check',
                        help='Check dependencies for LDP and exit',
                        dest='dependency_check',
                        action='store_true',
                        default=False,
                        required=False)

    parser.add_argument('-v',
                        '--version',
                        action='version',
                        version=f'LDP {version}')

    # Check if there are no arguments given or the user ask for the help message
    if len(args) < 1:
        parser.print_help()
        sys.exit(EXIT_CONFIG_ERROR)
    elif '-help' in args:
        parser.print_help()
        sys.exit(0)
    if '--check' in args:
        check_dependencies_only()

    args = parser.parse_args(args)
    if args.command is None:
        parser.print_help()
        sys.exit(EXIT_CONFIG_ERROR)

    return args
