"""Command-line entry point (``ehm``).

Exit codes: 0 success, 1 runtime error, 2 usage or configuration error,
3 gradient check outside tolerance.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import os
import random
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np
import torch

from ehm_tools import __version__
from ehm_tools.exceptions import ConfigurationError, EhmError, GradCheckFailed
from ehm_tools.logger import StructuredLogger, setup_logging
from ehm_tools.models import SCHEMAS, BenchReport, ErrorResponse, SynthSpec
from ehm_tools.tools import (
    BaseTool,
    BenchTool,
    EvaluateTool,
    FitTool,
    ForwardTool,
    GradCheckTool,
    RefineLabelsTool,
    SynthModelTool,
    TransferTool,
)
from ehm_tools.tools.model import bench_table

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_GRADCHECK = 3

logger = StructuredLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage errors as exceptions."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise ConfigurationError(message, context={"usage": self.format_usage().strip()})


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text}") from e


def _ids(text: str) -> list[int]:
    """Vertex ids as ``1,2,3`` or a JSON file holding a list."""
    path = Path(text)
    if path.suffix.lower() == ".json":
        try:
            return [int(i) for i in json.loads(path.read_text())]
        except (OSError, ValueError) as e:
            raise argparse.ArgumentTypeError(f"cannot read id list {text}: {e}") from e
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated ids: {text}") from e


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="Random seed (default 0)")
    common.add_argument(
        "--json-errors",
        action="store_true",
        default=argparse.SUPPRESS,
        help="Write errors to stderr as JSON",
    )
    common.add_argument(
        "--log-level",
        default=argparse.SUPPRESS,
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        help="Logging level (default from EHM_LOG_LEVEL, else INFO)",
    )
    common.add_argument(
        "--log-json",
        action="store_true",
        default=argparse.SUPPRESS,
        help="Emit log records as JSON lines",
    )
    return common


def _synth_flags(p: argparse.ArgumentParser) -> None:
    defaults = SynthSpec()
    p.add_argument("--v", type=int, default=defaults.v, help="Vertices (head included)")
    p.add_argument("--j", type=int, default=defaults.j, help="Body joints")
    p.add_argument("--s", type=int, default=defaults.s, help="Shape basis size")
    p.add_argument("--e", type=int, default=defaults.e, help="Expression basis size")
    p.add_argument("--k", type=int, default=defaults.k, help="Body keypoints")
    p.add_argument(
        "--kind", default=defaults.kind.value, choices=["body", "head", "composite"]
    )
    p.add_argument("--head-v", type=int, default=defaults.head_v)
    p.add_argument("--head-j", type=int, default=defaults.head_j)
    p.add_argument("--head-k", type=int, default=defaults.head_k)
    p.add_argument("--head-s", type=int, default=None)
    p.add_argument("--hand-joints", type=int, default=defaults.hand_joints)
    p.add_argument("--pose-dirs", action="store_true", help="Add pose-corrective blendshapes")


def build_parser() -> argparse.ArgumentParser:
    """Build the ``ehm`` argument parser."""
    common = _common()
    parser = _Parser(
        prog="ehm",
        description="Expressive human model engine: synthesis, posing, fitting, transfer, metrics",
        parents=[common],
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-model", parents=[common], help="Generate a synthetic model asset")
    _synth_flags(p)
    p.add_argument("-o", "--output", required=True, help="Output EHMA file")

    p = sub.add_parser("forward", parents=[common], help="Pose a model and export it")
    p.add_argument("asset", help="EHMA model file")
    p.add_argument("--params", help="Params JSON (rest pose if omitted)")
    p.add_argument("--obj", help="OBJ mesh output")
    p.add_argument("--keypoints", help="Keypoints JSON output")

    p = sub.add_parser("fit", parents=[common], help="Fit parameters to supervision")
    p.add_argument("asset", help="EHMA model file")
    p.add_argument("--supervision", nargs="+", required=True, help="Supervision JSON file(s)")
    p.add_argument("--mask", help="Silhouette mask (PNG or raw f32) for a single job")
    p.add_argument("--config", help="FitConfig JSON")
    p.add_argument("--init", nargs="+", help="Initial params JSON (one, or one per job)")
    p.add_argument("-o", "--output", help="Params JSON, or a directory for several jobs")
    p.add_argument("--report", help="FitReport JSON output (single job)")
    p.add_argument("--jobs", type=int, help="Worker count for several jobs")

    p = sub.add_parser("refine-labels", parents=[common], help="Refine pseudo-labels per part")
    p.add_argument("asset", help="EHMA model file")
    p.add_argument("--coarse", required=True, help="Coarse params JSON")
    p.add_argument("--keypoints", required=True, help="KeypointSet JSON")
    p.add_argument("--config", help="FitConfig JSON")
    p.add_argument("-o", "--output", help="Refined params JSON")

    p = sub.add_parser("transfer", parents=[common], help="Pose transfer between skeletons")
    modes = p.add_subparsers(dest="mode", required=True, parser_class=_Parser)
    d = modes.add_parser("derive", parents=[common], help="Derive rest-pose offsets")
    d.add_argument("source", help="Source EHMA")
    d.add_argument("target", help="Target EHMA")
    d.add_argument("--joint-map", help="JSON list of [source, target] pairs (by name if omitted)")
    d.add_argument("-o", "--output", help="PoseOffset JSON output")
    a = modes.add_parser("apply", parents=[common], help="Carry a source pose to the target")
    a.add_argument("--offset", required=True, help="PoseOffset JSON")
    a.add_argument("--pose", required=True, help="Source pose JSON")
    a.add_argument("-o", "--output", help="Target pose JSON output")

    p = sub.add_parser("eval", parents=[common], help="Evaluate predictions")
    p.add_argument("--pred", required=True, help="Prediction JSON or OBJ")
    p.add_argument("--gt", required=True, help="Ground-truth JSON or OBJ")
    p.add_argument("--region", type=_ids, help="Vertex ids for MVE (list or JSON file)")
    p.add_argument("--lip-region", type=_ids, help="Vertex ids for LVE (list or JSON file)")
    p.add_argument("--pck", type=_floats, default=[0.05, 0.1], help="PCK thresholds, e.g. 0.05,0.1")
    p.add_argument("--normalizer", type=float, help="PCK normalizer in px (gt bbox diagonal)")
    p.add_argument("--rigid", action="store_true", help="Align without scale")
    p.add_argument(
        "--align",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="Require (--align) or omit (--no-align) PA metrics; default reports them when possible",
    )
    p.add_argument("--mle", action="store_true", help="Report the mean vertex error as MLE")
    p.add_argument("--root", type=int, default=0, help="Root joint for centring")
    p.add_argument("-o", "--output", help="MetricReport JSON output")

    p = sub.add_parser("bench", parents=[common], help="Benchmark the forward model")
    p.add_argument("--asset", help="EHMA model file (synthetic composite if omitted)")
    _synth_flags(p)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("-o", "--output", help="BenchReport JSON output")

    p = sub.add_parser("grad-check", parents=[common], help="Verify loss gradients")
    p.add_argument("--asset", help="EHMA model file (seeded synthetic composite if omitted)")
    p.add_argument("--h", type=float, default=1e-5, help="Finite-difference step")
    p.add_argument("--tolerance", type=float, help="Max relative error")
    p.add_argument("--photo", action="store_true", help="Include the silhouette term")
    p.add_argument("--seeds", type=int, default=1, help="Check this many consecutive seeds")
    p.add_argument("-o", "--output", help="GradCheckReport JSON output")

    p = sub.add_parser("schema", parents=[common], help="Print the JSON schema of a document")
    p.add_argument("name", nargs="?", choices=sorted(SCHEMAS), help="Document name")

    sub.add_parser("serve", parents=[common], help="Run the MCP server on stdio")
    return parser


def _spec(args: argparse.Namespace, seed: int) -> dict[str, Any]:
    return {
        "v": args.v,
        "j": args.j,
        "s": args.s,
        "e": args.e,
        "k": args.k,
        "seed": seed,
        "kind": args.kind,
        "head_v": args.head_v,
        "head_j": args.head_j,
        "head_k": args.head_k,
        "head_s": args.head_s,
        "hand_joints": args.hand_joints,
        "pose_dirs": args.pose_dirs,
    }


def _run(tool: BaseTool, **kwargs: Any) -> Any:
    return asyncio.run(tool.execute(**kwargs))


def _print(result: Any) -> None:
    print(json.dumps(result, indent=2, default=str))


def _write(path: str | None, result: Any) -> None:
    if path:
        Path(path).write_text(json.dumps(result, indent=2, default=str))


def _fit(args: argparse.Namespace) -> Any:
    supervision: list[str] = list(args.supervision)
    if args.mask and len(supervision) != 1:
        raise ConfigurationError("--mask applies to a single supervision file")
    init = args.init
    if init is not None and len(init) == 1:
        init = init[0]
    single = len(supervision) == 1
    return _run(
        FitTool(),
        asset=args.asset,
        supervision=supervision[0] if single else supervision,
        mask=args.mask,
        config=args.config,
        init=init,
        output=args.output,
        report_output=args.report,
        jobs=args.jobs,
    )


def _grad_check(args: argparse.Namespace, seed: int) -> int:
    reports = []
    for s in range(seed, seed + max(1, args.seeds)):
        reports.append(
            _run(
                GradCheckTool(),
                asset=args.asset,
                seed=s,
                h=args.h,
                tolerance=args.tolerance,
                photo=args.photo,
            )
        )
    result: Any = reports[0] if len(reports) == 1 else {"reports": reports}
    _print(result)
    _write(args.output, result)
    failed = [seed + i for i, r in enumerate(reports) if r["passed"] is False]
    if failed:
        raise GradCheckFailed(
            "Analytic and numeric gradients disagree",
            context={
                "seeds": failed,
                "max_rel_error": max(r["max_rel_error"] for r in reports),
            },
        )
    return EXIT_OK


def dispatch(args: argparse.Namespace) -> int:
    """Run one parsed command and return its exit code."""
    seed = getattr(args, "seed", 0)
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)

    command = args.command
    logger.debug("Dispatching command", context={"command": command, "seed": seed})
    if command == "synth-model":
        _print(_run(SynthModelTool(), output=args.output, spec=_spec(args, seed)))
    elif command == "forward":
        _print(
            _run(
                ForwardTool(),
                asset=args.asset,
                params=args.params,
                obj_output=args.obj,
                keypoints_output=args.keypoints,
            )
        )
    elif command == "fit":
        _print(_fit(args))
    elif command == "refine-labels":
        _print(
            _run(
                RefineLabelsTool(),
                asset=args.asset,
                coarse=args.coarse,
                keypoints=args.keypoints,
                config=args.config,
                output=args.output,
            )
        )
    elif command == "transfer":
        if args.mode == "derive":
            kwargs = dict(source=args.source, target=args.target, joint_map=args.joint_map)
        else:
            kwargs = dict(offset=args.offset, pose=args.pose)
        _print(_run(TransferTool(), mode=args.mode, output=args.output, **kwargs))
    elif command == "eval":
        _print(
            _run(
                EvaluateTool(),
                pred=args.pred,
                gt=args.gt,
                region=args.region,
                lip_region=args.lip_region,
                pck=args.pck,
                normalizer=args.normalizer,
                rigid=args.rigid,
                mle=args.mle,
                align=args.align,
                root=args.root,
                output=args.output,
            )
        )
    elif command == "bench":
        result = _run(
            BenchTool(),
            asset=args.asset,
            spec=_spec(args, seed),
            iterations=args.iterations,
            warmup=args.warmup,
            seed=seed,
        )
        _print(result)
        _write(args.output, result)
        print(bench_table(BenchReport.model_validate(result)), file=sys.stderr)
    elif command == "grad-check":
        return _grad_check(args, seed)
    elif command == "schema":
        if args.name is None:
            _print(sorted(SCHEMAS))
        else:
            _print(SCHEMAS[args.name].model_json_schema())
    elif command == "serve":
        from ehm_tools.server import main as serve

        asyncio.run(serve())
    return EXIT_OK


def _exit_code(error: EhmError) -> int:
    if isinstance(error, GradCheckFailed):
        return EXIT_GRADCHECK
    if isinstance(error, ConfigurationError):
        return EXIT_USAGE
    return EXIT_RUNTIME


def _report(error: EhmError, json_errors: bool) -> None:
    if json_errors:
        response = ErrorResponse(
            error_type=type(error).__name__,
            message=error.message,
            details=error.context or None,
        )
        print(response.model_dump_json(), file=sys.stderr)
    else:
        print(f"ehm: {type(error).__name__}: {error.message}", file=sys.stderr)


def _apply_thread_cap() -> None:
    cap = os.environ.get("EHM_THREADS")
    if cap:
        try:
            torch.set_num_threads(max(1, int(cap)))
        except ValueError as e:
            raise ConfigurationError(
                "EHM_THREADS must be an integer", context={"EHM_THREADS": cap}
            ) from e


def main(argv: Sequence[str] | None = None) -> int:
    """Parse ``argv``, run the command and return the process exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    json_errors = "--json-errors" in argv
    try:
        args = build_parser().parse_args(argv)
        setup_logging(getattr(args, "log_level", None), getattr(args, "log_json", None))
        _apply_thread_cap()
        return dispatch(args)
    except EhmError as e:
        _report(e, json_errors)
        return _exit_code(e)
    except KeyboardInterrupt:
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
