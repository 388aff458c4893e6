"""Command line for one export run.

One invocation exports exactly one role; run it once per encoder. This keeps
every produced graph byte-reproducible (the serializer's type names depend on
what was traced earlier in the process) and keeps the tool a plain batch
script: files in, files out, no state.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ExportError
from .export import export_backbone
from .fixtures import make_parity_fixture
from .preprocessing import synthesize_fixture_images
from .reference import ROLES


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="export-glue",
        description="Export one frozen reference encoder to a portable graph "
                    "plus descriptor sidecar and optional parity fixtures.",
    )
    parser.add_argument("role", choices=sorted(ROLES))
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--checkpoint",
                        help="local save_pretrained directory (default: model hub)")
    parser.add_argument("--pre-projection", action="store_true",
                        help="export pooled features before the projection layer "
                             "(semantic role only)")
    parser.add_argument("--fixture", action="append", default=[], metavar="IMAGE",
                        help="image file to record a parity fixture for (repeatable)")
    parser.add_argument("--synthesize", type=int, default=0, metavar="N",
                        help="additionally generate N deterministic fixture images")
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for --synthesize (default 0)")
    args = parser.parse_args(argv)

    try:
        result = export_backbone(args.role, args.out, checkpoint=args.checkpoint,
                                 pre_projection=args.pre_projection)
        print(f"wrote {result.graph_path}")
        print(f"wrote {result.descriptor_path}")

        images = list(args.fixture)
        if args.synthesize:
            images += synthesize_fixture_images(
                f"{args.out}/fixture-src", args.synthesize, seed=args.seed)
        for image in images:
            fixture = make_parity_fixture(result.descriptor, image,
                                          f"{args.out}/fixtures",
                                          reference=result.reference)
            print(f"fixture {fixture.image_path}")
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ExportError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
