"""Run the adapter service: python -m herdpipe_adapter [--engine synthetic]"""

import argparse
from pathlib import Path

import uvicorn

from .app import create_app
from .config import AdapterConfig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="herdpipe-adapter", description=__doc__)
    parser.add_argument("--engine", default="synthetic",
                        choices=("synthetic", "groundingdino-sam-yolo"))
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8601)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--data-dir", default=".", help="root for image_path requests")
    parser.add_argument("--journal-dir", default=None, help="training-run JSON journals")
    parser.add_argument("--classes", default="camel,rope,mask,pole",
                        help="class names used by /v1/infer")
    parser.add_argument("--detector-config")
    parser.add_argument("--detector-checkpoint")
    parser.add_argument("--segmenter-checkpoint")
    parser.add_argument("--student-checkpoint")
    args = parser.parse_args(argv)

    config = AdapterConfig(
        engine=args.engine,
        host=args.host,
        port=args.port,
        device=args.device,
        data_dir=Path(args.data_dir),
        journal_dir=Path(args.journal_dir) if args.journal_dir else None,
        class_names=tuple(args.classes.split(",")),
        detector_config=Path(args.detector_config) if args.detector_config else None,
        detector_checkpoint=Path(args.detector_checkpoint) if args.detector_checkpoint else None,
        segmenter_checkpoint=Path(args.segmenter_checkpoint) if args.segmenter_checkpoint else None,
        student_checkpoint=Path(args.student_checkpoint) if args.student_checkpoint else None,
    )
    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
