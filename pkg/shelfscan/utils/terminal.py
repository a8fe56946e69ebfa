"""
shelfscan
~~~~~~~~~

:license: MIT, see LICENSE for more details.
"""

import csv
import sys
import json
import logging
import argparse
import re
from dataclasses import fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import shelfscan
from shelfscan.engine import exception
from shelfscan.engine.evalkit import (
    REFERENCE_RESULTS,
    SceneRow,
    generate_scene,
    load_suite,
    run_suite,
    suite_patterns,
    suite_scene,
)
from shelfscan.engine.features import extract_features, write_features
from shelfscan.engine.imagecore import RasterImage, load_image, save_png
from shelfscan.engine.interface import Fetcher
from shelfscan.engine.pipeline import PatternEntry, SceneContext, run_multi_product
from shelfscan.utils.config import Config, RunConfig


class Terminal:
    """Provides different methods for handling command-line jobs.

    Attributes:
        silent (bool): If set to `True`, don't write to `stdout` or `stderr`.

    Usage:

        >>> from shelfscan.utils.terminal import Terminal
        >>> Terminal.silent = True # Don't write to stdout & stderr
        >>> Terminal.detect(
        ...     scene="shelf.jpg",
        ...     patterns=["cereal=cereal.png"],
        ...     output="report.json",
        ... )
    """

    # Exit Code Constants
    EX_SUCCESSFUL = 0
    EX_OTHER = 1
    EX_INPUT_ERROR = 2
    EX_CONFIG_ERROR = 3
    EX_OUTPUT_ERROR = 4
    EX_SUITE_ERROR = 5

    PATTERN_ID = re.compile(r"^[\w.-]+$")

    silent: bool = False

    @classmethod
    def extract(cls, image: str, output: str, config: Optional[str] = None) -> None:
        """Extract features of an image into a feature file.

        Args:
            image (str): Image path or http(s) URL.
            output (str): Feature file path.
            config (str, optional): Configuration file.
        """

        cfg = cls._call_task(Config.load, {"path": config})
        cls._step(f"Reading {image}", "1/3")
        raster = cls._call_task(load_image, {"source": image})
        cls._step("Extracting features", "2/3")
        features = cls._call_task(
            extract_features,
            {"img": raster, "cfg": cfg.extractor, "source_id": cls._source_id(image)},
        )
        cls._step(f"Writing {len(features)} features", "3/3")
        path = cls._call_task(write_features, {"fs": features, "path": output})
        cls._done(f"Features saved as {path}")

    @classmethod
    def detect(
        cls,
        scene: str,
        patterns: Sequence[str],
        output: Optional[str] = None,
        config: Optional[str] = None,
        debug_dir: Optional[str] = None,
    ) -> None:
        """Detect every pattern in a scene and write the detection report.

        Args:
            scene (str): Scene image path or URL.
            patterns (Sequence[str]): `path` or `id=path` pattern arguments.
            output (str, optional): Report path; `stdout` if not set.
            config (str, optional): Configuration file.
            debug_dir (str, optional): Directory for the vote images.
        """

        cfg: RunConfig = cls._call_task(Config.load, {"path": config})
        debug_dir = debug_dir or cfg.debug.vote_image_dir
        steps = len(patterns) + 2

        cls._step(f"Extracting scene features of {scene}", f"1/{steps}")
        raster = cls._call_task(load_image, {"source": scene})
        context = cls._call_task(
            SceneContext.from_image,
            {"image": raster, "scene_id": cls._source_id(scene), "cfg": cfg.extractor},
        )

        entries = []
        for step, argument in enumerate(patterns, start=2):
            pattern_id, source = cls._split_pattern(argument)
            cls._step(f"Extracting pattern features of {pattern_id}", f"{step}/{steps}")
            image = cls._call_task(load_image, {"source": source})
            entries.append(cls._call_task(
                PatternEntry.from_image,
                {"image": image, "pattern_id": pattern_id, "cfg": cfg.extractor},
            ))

        sink = None
        if debug_dir:
            sink = cls._debug_sink(Path(debug_dir))

        cls._step("Detecting", f"{steps}/{steps}")
        report = cls._call_task(
            run_multi_product,
            {"scene": context, "patterns": entries, "cfg": cfg, "debug_sink": sink},
        )
        if output:
            path = cls._call_task(report.write, {"path": output})
            cls._done(f"{len(report.occurrences)} occurrences saved as {path}")
        else:
            sys.stdout.write(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def bench(cls, suite: str, output: str, config: Optional[str] = None) -> None:
        """Run a synthetic benchmark suite.

        Writes `<output>.json` with the aggregate metrics and `<output>.csv`
        with one row per scene.
        """

        spec = cls._call_task(load_suite, {"path": suite})
        cfg = cls._call_task(Config.load, {"path": config})
        cls._step(f"Running {spec.scenes} scenes of {spec.name}", "1/2")
        result = cls._call_task(run_suite, {"suite": spec, "cfg": cfg})

        cls._step("Writing metrics", "2/2")
        stem = Path(output)
        document = {
            "suite": spec.name,
            "metrics": result.metrics.to_dict(),
            "reference": REFERENCE_RESULTS,
        }
        try:
            stem.with_suffix(".json").write_text(
                json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )
            with open(stem.with_suffix(".csv"), "w", encoding="utf-8", newline="") as file:
                writer = csv.writer(file)
                columns = [f.name for f in fields(SceneRow)]
                writer.writerow(columns)
                for row in result.rows:
                    writer.writerow(
                        "" if getattr(row, name) is None else getattr(row, name)
                        for name in columns
                    )
        except OSError as error:
            cls._error(f"Cannot write {stem}: {error}", "OUTPUT_WRITE")
            cls.exit(cls.EX_OUTPUT_ERROR)

        rate = result.metrics.detection_rate
        cls._info(
            "Detection rate "
            + ("n/a" if rate is None else f"{rate:.3f}")
            + f", false detection chance {result.metrics.false_detection_chance:.3f}"
        )
        cls._done(f"Metrics saved as {stem.with_suffix('.json')}")

    @classmethod
    def synth(cls, suite: str, output_dir: str) -> None:
        """Render the scenes of a suite as PNG and ground truth JSON pairs."""

        spec = cls._call_task(load_suite, {"path": suite})
        directory = Path(output_dir)
        try:
            directory.mkdir(parents=True, exist_ok=True)
        except OSError as error:
            cls._error(f"Cannot create {directory}: {error}", "OUTPUT_WRITE")
            cls.exit(cls.EX_OUTPUT_ERROR)

        patterns = suite_patterns(spec)
        for pattern_id, image in patterns.items():
            cls._call_task(save_png, {"img": image, "path": directory / f"{pattern_id}.png"})
        for index in range(spec.scenes):
            scene_spec = suite_scene(spec, index, patterns)
            cls._step(f"Rendering {scene_spec.scene_id}", f"{index + 1}/{spec.scenes}")
            image, truth = cls._call_task(generate_scene, {"spec": scene_spec})
            cls._call_task(save_png, {"img": image, "path": directory / f"{truth.scene_id}.png"})
            cls._call_task(truth.write, {"path": directory / f"{truth.scene_id}.json"})
        cls._done(f"{spec.scenes} scenes saved in {directory.resolve()}")

    @classmethod
    def config(cls, assignments: Sequence[str], show: bool) -> None:
        """Write `section.key=value` options and optionally print the result."""

        for assignment in assignments:
            section, key, value = cls._call_task(Config.parse_assignment, {"text": assignment})
            cls._call_task(Config.write, {"section": section, "key": key, "value": value})
            cls._info(f"{section}.{key} = {json.dumps(value)}")
        if show:
            cfg = cls._call_task(Config.load, {})
            cls._print(Config.dump(cfg))

    @classmethod
    def enable_verbose(cls) -> None:
        """Stream library log records of every level to `stderr`."""

        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        logger = logging.getLogger("shelfscan")
        logger.addHandler(handler)
        logger.setLevel(logging.DEBUG)

    @classmethod
    def _call_task(cls, func: Callable[..., Any], kwargs: Dict[str, Any]) -> Any:
        """Call a library function and turn its exceptions into exit codes.

        Args:
            func (Callable[..., Any]): The library callable.
            kwargs (Dict[str, Any]): Keyword arguments of the callable `func`.

        Returns:
            Any: Whatever `func` returns.
        """

        try:
            return func(**kwargs)
        except exception.ShelfscanException as error:
            cls._error(str(error), exception.code_of(error))
            cls.exit(cls._exit_code(error))
        except Exception as error: # pylint: disable=broad-except
            cls._error(repr(error))
            cls.exit(cls.EX_OTHER)
        return None

    @classmethod
    def _exit_code(cls, error: exception.ShelfscanException) -> int:
        if isinstance(error, (exception.ImageEncodeError, exception.OutputWriteError)):
            return cls.EX_OUTPUT_ERROR
        if isinstance(error, (exception.ImageError, exception.FeatureFileError)):
            return cls.EX_INPUT_ERROR
        if isinstance(error, exception.ConfigError):
            return cls.EX_CONFIG_ERROR
        if isinstance(error, exception.SuiteSpecError):
            return cls.EX_SUITE_ERROR
        return cls.EX_OTHER

    @classmethod
    def _split_pattern(cls, argument: str) -> Tuple[str, str]:
        """Split an `id=path` pattern argument; a bare path names itself."""

        name, sep, source = argument.partition("=")
        if sep and source and cls.PATTERN_ID.match(name):
            return name, source
        return cls._source_id(argument), argument

    @classmethod
    def _source_id(cls, source: str) -> str:
        if Fetcher.is_remote(source):
            source = source.split("?", 1)[0].rstrip("/")
        return Path(source).stem or "image"

    @classmethod
    def _debug_sink(cls, directory: Path) -> Callable[[str, RasterImage], None]:
        try:
            directory.mkdir(parents=True, exist_ok=True)
        except OSError as error:
            cls._error(f"Cannot create {directory}: {error}", "OUTPUT_WRITE")
            cls.exit(cls.EX_OUTPUT_ERROR)

        def sink(name: str, image: RasterImage) -> None:
            save_png(image, directory / f"{name}.png")

        return sink

    @classmethod
    def _print(cls, text: str, end: str = "\n") -> None:
        if cls.silent:
            return
        sys.stdout.write(str(text) + end)

    @classmethod
    def _done(cls, text: str) -> None:
        if cls.silent:
            return
        sys.stdout.write(f"[DONE] {text}\n")

    @classmethod
    def _step(cls, text: str, step: str) -> None:
        """Write the step of a job to the `stdout`.

        Args:
            text (str): Description of the step.
            step (str): The step. E.g. `"1"` or `"1/5"`.
        """

        if cls.silent:
            return
        sys.stdout.write(f"[{str(step)}] {str(text)}\n")

    @classmethod
    def _error(cls, text: str, errcode: Optional[str] = None, end: str = "\n") -> None:
        """Write an error-line to the `stderr`.

        Args:
            text (str): The error-line description.
            errcode (str, optional): A unique error code. Defaults to `None`.
            end (str, optional): String appended to the
                end of the `text`. Defaults to `"\\n"`.
        """

        if cls.silent:
            return
        errline = "[ERROR"
        if errcode:
            errline += f" {str(errcode)}] "
        else:
            errline += "] "
        errline += str(text) + end

        sys.stderr.write(errline)

    @classmethod
    def _info(cls, text: str) -> None:
        if cls.silent:
            return
        sys.stdout.write("[INFO] " + str(text) + "\n")

    @classmethod
    def parse(cls, argv: Optional[List[str]] = None) -> argparse.Namespace:
        """Use `argparse` to define & parse command-line options and arguments.

        Args:
            argv (List[str], optional): Arguments to parse instead of
                `sys.argv`.

        Returns:
            Namespace: A simple `object` containing attributes.
        """

        parser = argparse.ArgumentParser(
            allow_abbrev=False,
            add_help=False,
            prog="shelfscan",
            usage="%(prog)s [options] <command> [<args>]",
            description=("Find every occurrence of product patterns in "
                         "shelf photographs."),
        )

        subparsers = parser.add_subparsers(
            title="command",
            dest="command",
            prog="shelfscan",
            metavar="",
            help=""
        )

        # Flags shared by the working commands
        common = argparse.ArgumentParser(add_help=False)
        common.add_argument(
            "--silent",
            action="store_true",
            help="run without writing to standard output"
        )
        common.add_argument(
            "--verbose",
            action="store_true",
            help="write debug log records to standard error"
        )

        # Create the parser for the <extract> command
        parser_extract = subparsers.add_parser(
            "extract",
            parents=[common],
            usage="%(prog)s --image <image> --out <file> [<args>]",
            help="Write the features of an image to a feature file",
            description="Detect and describe the local features of <image>.",
        )
        args_extract = parser_extract.add_argument_group("args")
        args_extract.add_argument("--image", required=True, metavar="<image>",
                                  help="image path or http(s) URL (required)")
        args_extract.add_argument("--out", required=True, metavar="<file>",
                                  help="feature file to write (required)")
        args_extract.add_argument("--config", metavar="<file>",
                                  help="configuration file")

        # Create the parser for the <detect> command
        parser_detect = subparsers.add_parser(
            "detect",
            parents=[common],
            usage="%(prog)s --scene <image> --pattern <[id=]image> ... [<args>]",
            help="Detect product patterns in a scene",
            description="Find every occurrence of each --pattern in the "
                        "--scene image and write a JSON detection report.",
        )
        args_detect = parser_detect.add_argument_group("args")
        args_detect.add_argument("--scene", required=True, metavar="<image>",
                                 help="scene image path or URL (required)")
        args_detect.add_argument("--pattern", required=True, nargs="+",
                                 metavar="<[id=]image>",
                                 help="pattern images, optionally named (required)")
        args_detect.add_argument("--out", metavar="<file>",
                                 help="report file; standard output if not set")
        args_detect.add_argument("--config", metavar="<file>",
                                 help="configuration file")
        args_detect.add_argument("--debug-dir", metavar="<directory>",
                                 help="write the vote image of every pattern entry")

        # Create the parser for the <bench> command
        parser_bench = subparsers.add_parser(
            "bench",
            parents=[common],
            usage="%(prog)s --suite <file> --out <stem> [<args>]",
            help="Score the detector on a synthetic suite",
            description="Generate the suite's scenes, detect, score and "
                        "write <stem>.json metrics and <stem>.csv rows.",
        )
        args_bench = parser_bench.add_argument_group("args")
        args_bench.add_argument("--suite", required=True, metavar="<file>",
                                help="suite JSON file (required)")
        args_bench.add_argument("--out", required=True, metavar="<stem>",
                                help="output path without suffix (required)")
        args_bench.add_argument("--config", metavar="<file>",
                                help="configuration file")

        # Create the parser for the <synth> command
        parser_synth = subparsers.add_parser(
            "synth",
            parents=[common],
            usage="%(prog)s --suite <file> --out-dir <directory>",
            help="Render synthetic scenes with ground truth",
            description="Write the patterns and every scene of a suite as "
                        "PNG files next to their ground truth JSON.",
        )
        args_synth = parser_synth.add_argument_group("args")
        args_synth.add_argument("--suite", required=True, metavar="<file>",
                                help="suite JSON file (required)")
        args_synth.add_argument("--out-dir", required=True, metavar="<directory>",
                                help="output directory (required)")

        # Create the parser for the <config> command
        parser_config = subparsers.add_parser(
            "config",
            usage="%(prog)s [--set <section.key=value> ...] [--show]",
            help="Configure global config file",
            description="Set shelfscan global options.",
        )
        args_config = parser_config.add_argument_group("args")
        args_config.add_argument("--set", nargs="+", default=[], dest="assignments",
                                 metavar="<section.key=value>",
                                 help="store options in the global config file")
        args_config.add_argument("--show", action="store_true",
                                 help="print the effective configuration")

        # Create [options] and add args
        option = parser.add_argument_group("options")
        option.add_argument("-v", "--version",
            action="version",
            version=f"shelfscan version {shelfscan.__version__}",
            help="output version information and exit"
        )
        option.add_argument("-h", "--help",
            action="help",
            help="display this help message and exit"
        )

        if argv is None:
            argv = sys.argv[1:]
        # By passing the `--help` flag to the args we are sure
        # the help message is shown even if `shelfscan` command
        # is called in terminal without any arguments.
        return parser.parse_args(args=argv if argv else ["--help"])

    @staticmethod
    def exit(exitcode: int) -> None:
        """Exit the program with a proper exit code.

        Args:
            exitcode (int): Exit code. Pass constants in `Terminal`
                start with `EX_...`
        """
        sys.exit(exitcode)
