#!/usr/bin/env python3
"""
RankSight - per-layer SVD rank search for layered linear models
"""

import argparse
import os
import sys

from colorama import Fore, Style, init

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

init(autoreset=True)

from core.config import MODES, load_config  # noqa: E402
from core.errors import RankSightError  # noqa: E402
from core.utils import log_action, print_error, setup_logging  # noqa: E402

VERSION = '1.0.0'

MENU = (
    ('1', 'profile', 'Build Toy Profile    - Train and cache the bundled toy model'),
    ('2', 'sweep', 'Sensitivity Sweep    - Compress one layer at a time'),
    ('3', 'search', 'Rank Search          - Policy-gradient search for a scheme'),
    ('4', 'condense', 'Condense Dev Split   - Build the fast proxy split'),
    ('5', 'select', 'Select Best          - Re-rank top schemes on the holdout split'),
    ('6', 'compress', 'Compress Model       - Apply a scheme (optionally retrain)'),
    ('7', 'eval', 'Evaluate Model       - Error on one split'),
    ('8', 'report', 'Search Report        - CSV of every proposed scheme'),
)


def print_banner():
    try:
        print(f"\n{Fore.CYAN}{Style.BRIGHT}RankSight{Style.RESET_ALL} "
              f"{Fore.GREEN}per-layer SVD rank search{Style.RESET_ALL}")
        print(f"{Fore.YELLOW}Version {VERSION} | choose a command or 0 to exit{Style.RESET_ALL}")
    except UnicodeEncodeError:
        print(f"RankSight {VERSION}")


def show_menu():
    print(f"\n{Fore.BLUE}{Style.BRIGHT}Available Commands:{Style.RESET_ALL}")
    for key, _, label in MENU:
        print(f"{Fore.GREEN}{key}.{Style.RESET_ALL} {label}")
    print(f"{Fore.GREEN}9.{Style.RESET_ALL} Plugin Evaluators    - List evaluator plugins")
    print(f"{Fore.RED}0.{Style.RESET_ALL} Exit/Quit            - Exit RankSight")
    print()


def run(config_path, overrides=None, mode=None):
    """Load the config and run its command; returns the process exit code"""
    from core.commands import run_command

    logger = setup_logging()
    try:
        config = load_config(config_path, overrides, mode)
        run_command(config)
        log_action(config.mode, config_path or 'defaults')
        return 0
    except RankSightError as exc:
        print_error(str(exc))
        logger.error(f"{type(exc).__name__}: {exc}")
        log_action(mode or 'run', f"{type(exc).__name__}: {exc}", success=False)
        return exc.exit_code
    except OSError as exc:
        print_error(f"file error: {exc}")
        logger.error(f"{type(exc).__name__}: {exc}")
        log_action(mode or 'run', f"{type(exc).__name__}: {exc}", success=False)
        return 2
    except KeyboardInterrupt:
        print(f"\n{Fore.YELLOW}Cancelled{Style.RESET_ALL}")
        return 130


def show_checkpoint(path):
    from core.commands import cmd_checkpoint_info

    try:
        cmd_checkpoint_info(path)
        return 0
    except RankSightError as exc:
        print_error(str(exc))
        return exc.exit_code
    except OSError as exc:
        print_error(f"cannot read checkpoint {path}: {exc}")
        return 2


def interactive():
    """Menu loop used when no arguments are given"""
    print_banner()
    config_path = None
    while True:
        try:
            show_menu()
            choice = input(f"{Fore.YELLOW}Enter your choice (0-9): {Style.RESET_ALL}").strip()
            if choice in ('0', 'quit', 'exit', 'q'):
                print(f"\n{Fore.GREEN}Done.{Style.RESET_ALL}")
                break
            if choice == '9':
                from core.plugins import load_plugins
                load_plugins().list_plugins()
                continue
            modes = {key: mode for key, mode, _ in MENU}
            if choice not in modes:
                print(f"{Fore.RED}Error: Invalid choice. Please select 0-9.{Style.RESET_ALL}")
                continue
            entered = input(f"Config file [{config_path or 'defaults'}]: ").strip()
            config_path = entered or config_path
            overrides = []
            if modes[choice] == 'search':
                target = input("Target speedup (blank keeps config value): ").strip()
                if target:
                    overrides.append(f"reward.target_speedup={target}")
            run(config_path, overrides, modes[choice])
        except (KeyboardInterrupt, EOFError):
            print(f"\n{Fore.GREEN}Done.{Style.RESET_ALL}")
            break


def build_parser():
    parser = argparse.ArgumentParser(prog='ranksight', description='Per-layer SVD rank search')
    parser.add_argument('config', nargs='?', help='JSON run configuration')
    parser.add_argument('--mode', choices=MODES, help='override the config mode')
    parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='SECTION.KEY=VALUE',
                        help='override one config field (repeatable)')
    parser.add_argument('--checkpoint-info', metavar='PATH', help='summarize a controller checkpoint and exit')
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    if not argv:
        interactive()
        return 0
    args = build_parser().parse_args(argv)
    if args.checkpoint_info:
        return show_checkpoint(args.checkpoint_info)
    return run(args.config, args.overrides, args.mode)


if __name__ == '__main__':
    sys.exit(main())
