"""
popscales command line

    python cli.py run configs/polymorphic.yaml [--out DIR] [--parallel N]
    python cli.py report workspace/polymorphic/manifest.json [--plot]
    python cli.py validate configs/polymorphic.yaml

exit codes: 0 success, 2 invalid configuration, 3 failed cells, 4 missing
outputs on report
"""
import argparse
import sys

import report
import run
from configs import ConfigError, load_config
from proj_models.errors import PopscalesError

EXIT_OK, EXIT_CONFIG, EXIT_LAB, EXIT_MISSING = 0, 2, 3, 4


def get_parser():
    parser = argparse.ArgumentParser(prog='popscales', description='population models across time scales')
    sub = parser.add_subparsers(dest='command', required=True)

    run_parser = sub.add_parser('run', help='execute every (sweep, seed) cell of a config')
    run_parser.add_argument('config', nargs='?', default=None, help='config file path')
    run_parser.add_argument('--config', dest='config_opt', type=str, default=None)
    run.add_arguments(run_parser)

    report_parser = sub.add_parser('report', help='summary tables from a run manifest')
    report_parser.add_argument('manifest', type=str)
    report.add_arguments(report_parser)

    validate_parser = sub.add_parser('validate', help='check a config without running it')
    validate_parser.add_argument('config', nargs='?', default=None)
    validate_parser.add_argument('--config', dest='config_opt', type=str, default=None)
    return parser


def main(argv=None):
    args = get_parser().parse_args(argv)
    if args.command in ('run', 'validate'):
        args.config = args.config or args.config_opt
        if args.config is None:
            print('error: a config path is required', file=sys.stderr)
            return EXIT_CONFIG
    try:
        if args.command == 'validate':
            cfg = load_config(args.config)
            print('{}: {} cells ({} / {})'.format(cfg.config_name, len(cfg.cells()), cfg.lab, cfg.experiment))
            return EXIT_OK
        if args.command == 'run':
            return run.main(args)
        return report.main(args)
    except ConfigError as err:
        print('config error at {}'.format(err), file=sys.stderr)
        return EXIT_CONFIG
    except report.MissingOutputError as err:
        print(str(err), file=sys.stderr)
        return EXIT_MISSING
    except PopscalesError as err:
        print('{}: {}'.format(type(err).__name__, err), file=sys.stderr)
        return EXIT_LAB


if __name__ == "__main__":
    sys.exit(main())
