import sys
import argparse
import logging

from src.cli.commands import cmd_denoise, cmd_eval, cmd_simulate, cmd_sweep, cmd_train
from src.cli.run_config import load_run_config
from src.utils.config import get_config
from src.utils.errors import ConfigError, ContractError, DimensionError, FormatError, NumericError
from src.utils.logger import setup_logger

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def parse_temperatures(value: str):

    try:
        return [float(t) for t in value.split(',') if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {value!r}")


def build_parser() -> argparse.ArgumentParser:

    parser = argparse.ArgumentParser(
        prog='rddm',
        description='Residual-driven drifting denoiser: simulate, train, denoise, evaluate'
    )

    parser.add_argument(
        '--config-dir',
        type=str,
        default='config',
        help='Configuration directory path (default: config)'
    )

    parser.add_argument(
        '--log-level',
        type=str,
        default=None,
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'],
        help='Logging level (default: RDDM_LOG_LEVEL or INFO)'
    )

    parser.add_argument(
        '--log-file',
        type=str,
        default=None,
        help='Also write the run log to this file'
    )

    sub = parser.add_subparsers(dest='command', required=True)

    simulate = sub.add_parser('simulate', help='Render phantoms and write train/test image archives')
    simulate.add_argument('--config', type=str, default=None, help='Run config (default: <config-dir>/simulate.json)')
    simulate.add_argument('--out-dir', type=str, required=True, help='Output directory for train.rddi / test.rddi')
    simulate.add_argument('--seed', type=int, default=None)

    train = sub.add_parser('train', help='Train the one-step generator')
    train.add_argument('--config', type=str, default=None, help='Run config (default: <config-dir>/train.json)')
    train.add_argument('--dataset', type=str, required=True, help='Dataset directory or train image archive')
    train.add_argument('--out', type=str, required=True, help='Checkpoint path')
    train.add_argument('--variant', type=str, default=None, help='Preset: fine, balanced, smooth or l1')
    train.add_argument('--temperatures', type=parse_temperatures, default=None, help='Explicit temperatures, e.g. 1.0,1.5')
    train.add_argument('--lambda', dest='lam', type=float, default=None, help='Explicit pixel-loss weight')
    train.add_argument('--iterations', type=int, default=None)
    train.add_argument('--seed', type=int, default=None)
    train.add_argument('--resume', type=str, default=None, help='Checkpoint to resume from')
    train.add_argument('--log', type=str, default=None, help='Training log (default: <out>.log)')

    denoise = sub.add_parser('denoise', help='Denoise an image archive with one generator pass per image')
    denoise.add_argument('--config', type=str, default=None, help='Run config (default: <config-dir>/denoise.json)')
    denoise.add_argument('--checkpoint', type=str, required=True)
    denoise.add_argument('--input', type=str, required=True)
    denoise.add_argument('--output', type=str, required=True)
    denoise.add_argument('--seed', type=int, default=None)
    denoise.add_argument('--raw-weights', action='store_true', help='Use raw instead of EMA weights')
    denoise.add_argument('--timing', type=str, default=None, help='Timing CSV (default: <output>.timing.csv)')

    evaluate = sub.add_parser('eval', help='Write metrics, RPS and NPS CSV reports')
    evaluate.add_argument('--config', type=str, default=None, help='Run config (default: <config-dir>/eval.json)')
    evaluate.add_argument('--pred', type=str, required=True)
    evaluate.add_argument('--ref', type=str, required=True)
    evaluate.add_argument('--out-dir', type=str, required=True)
    evaluate.add_argument('--pred-key', type=str, default=None)
    evaluate.add_argument('--ref-key', type=str, default=None)
    evaluate.add_argument('--roi-size', type=int, default=None)

    sweep = sub.add_parser('sweep', help='Train and evaluate one model per temperature/lambda setting')
    sweep.add_argument('--config', type=str, default=None, help='Run config (default: <config-dir>/sweep.json)')
    sweep.add_argument('--dataset', type=str, required=True, help='Dataset directory holding train.rddi and test.rddi')
    sweep.add_argument('--out-dir', type=str, required=True)

    return parser


def run(args) -> None:

    if args.command == 'simulate':
        config = load_run_config('simulate', args.config, {'seed': args.seed})
        cmd_simulate(config, args.out_dir)

    elif args.command == 'train':
        overrides = {
            'variant': args.variant,
            'temperatures': args.temperatures,
            'lambda': args.lam,
            'iterations': args.iterations,
            'seed': args.seed
        }
        config = load_run_config('train', args.config, overrides)
        cmd_train(config, args.dataset, args.out, log_file=args.log, resume=args.resume)

    elif args.command == 'denoise':
        overrides = {'seed': args.seed, 'use_ema': False if args.raw_weights else None}
        config = load_run_config('denoise', args.config, overrides)
        cmd_denoise(config, args.checkpoint, args.input, args.output, args.timing)

    elif args.command == 'eval':
        overrides = {'pred_key': args.pred_key, 'ref_key': args.ref_key, 'roi_size': args.roi_size}
        config = load_run_config('eval', args.config, overrides)
        cmd_eval(config, args.pred, args.ref, args.out_dir)

    elif args.command == 'sweep':
        config = load_run_config('sweep', args.config)
        cmd_sweep(config, args.dataset, args.out_dir)


def main(argv=None) -> int:

    args = build_parser().parse_args(argv)

    try:
        settings = get_config(config_dir=args.config_dir)
        level = args.log_level or settings.get_log_level()
        setup_logger("src", log_file=args.log_file, log_level=getattr(logging, level, logging.INFO))
        run(args)

    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE

    except NumericError as e:
        print(f"Numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC

    except (FormatError, DimensionError, ContractError, OSError) as e:
        print(f"Data error: {e}", file=sys.stderr)
        return EXIT_DATA

    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
