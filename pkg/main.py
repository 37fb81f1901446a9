import argparse
import signal
import sys

from dotenv import load_dotenv

from src.commands import COMMANDS
from src.data.config import load_config
from src.utils import console
from src.utils.errors import RadpairError

INTERRUPTED_EXIT = 130

EPILOG = """\
exit codes:
  0  success
  2  config schema error (the message names the field)
  3  physics validation error (Hamiltonian, projector, rho0, trajectory step)
  4  output could not be written
  5  check: a residual exceeded 1e-9
  130 interrupted (no partial files are left behind)

regime classifier (compare report): oscillatory = at least two interior maxima
of pop_s above 1e-3; zeno = monotone within 1e-6 with a decay rate below
0.5*min(k_S+k_T, omega); monotone_decay otherwise.
"""


def signal_handler(signum, frame):
    """SIGTERM 与 Ctrl+C 同样处理：抛出 KeyboardInterrupt，由写入器清理临时文件"""
    raise KeyboardInterrupt


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radpair",
        description="Spin-selective radical-pair kinetics: Haberkorn vs quantum-measurement master equations.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    helps = {
        "evolve": "propagate rho0 and write <prefix>_<approach>.csv",
        "compare": "run both approaches and write a comparison report",
        "sweep": "singlet-population surfaces over (k_T/omega, t) with fitted decay rates",
        "trajectories": "Monte-Carlo trajectory ensemble (needs a trajectory block)",
        "check": "print self-consistency residuals; exit 5 if any exceeds 1e-9",
    }
    for name, text in helps.items():
        cmd = sub.add_parser(name, help=text, description=text)
        cmd.add_argument("--config", required=True, help="JSON run config (schema 1)")
        cmd.add_argument("--out", default=None, help="output directory (overrides output.directory)")
        cmd.add_argument("--quiet", action="store_true", help="silence progress bars and info messages")
        if name == "compare":
            cmd.add_argument("--excel", action="store_true", default=None, help="also write <prefix>_compare.xlsx")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    console.set_quiet(args.quiet)
    load_dotenv()

    # Ctrl+C 由 KeyboardInterrupt 处理；SIGTERM 转成同样的路径
    signal.signal(signal.SIGTERM, signal_handler)

    try:
        cfg = load_config(args.config).with_overrides(out_dir=args.out, excel=getattr(args, "excel", None))
        return COMMANDS[args.command](cfg)
    except RadpairError as e:
        console.error(str(e))
        return e.exit_code
    except KeyboardInterrupt:
        console.warn("检测到用户中断 (Ctrl+C)，未写入任何结果文件")
        return INTERRUPTED_EXIT


if __name__ == "__main__":
    sys.exit(main())
