"""Command line client for the fusion service.

Every subcommand is a thin wrapper over one HTTP route: arguments become a
JSON request, the response is rendered for the terminal. By default the
service app runs in-process, so no server needs to be up; point
``--server`` (or PANFUSE_SERVER) at a running instance to go over the
network instead. Percentages are formatted with 2 decimals here and only
here; reports and response bodies keep full float precision.

Exit codes: 0 success, 2 usage or config error, 3 data errors (format,
corruption, validation, consistency, scheme).
"""

from __future__ import annotations

import argparse
import asyncio
import json
import os
import sys

import httpx

from .errors import EXIT_CODE_BY_CATEGORY

_TIMEOUT = 600.0


class ServiceFailure(Exception):
    def __init__(self, category: str, detail: str):
        super().__init__(f"{category}: {detail}")
        self.category = category
        self.detail = detail


class ServiceClient:
    """Requests against a remote server or the in-process app."""

    def __init__(self, base_url: str | None = None):
        self.base_url = base_url
        self._app = None
        if base_url is None:
            from .service import create_app

            self._app = create_app()

    def get(self, path: str) -> dict:
        return self._request("GET", path, None)

    def post(self, path: str, payload: dict) -> dict:
        return self._request("POST", path, payload)

    def _request(self, method: str, path: str, payload: dict | None) -> dict:
        if self._app is not None:
            response = asyncio.run(self._asgi_request(method, path, payload))
        else:
            with httpx.Client(base_url=self.base_url, timeout=_TIMEOUT) as client:
                response = client.request(method, path, json=payload)
        return self._unwrap(response)

    async def _asgi_request(
        self, method: str, path: str, payload: dict | None
    ) -> httpx.Response:
        transport = httpx.ASGITransport(app=self._app)
        async with httpx.AsyncClient(
            transport=transport, base_url="http://engine", timeout=_TIMEOUT
        ) as client:
            return await client.request(method, path, json=payload)

    @staticmethod
    def _unwrap(response: httpx.Response) -> dict:
        try:
            body = response.json()
        except ValueError:
            body = None
        if response.status_code < 400:
            return body
        if isinstance(body, dict) and "error" in body:
            err = body["error"]
            raise ServiceFailure(err.get("category", "engine"), err.get("detail", ""))
        # fastapi's own request validation produces {"detail": [...]}
        detail = body.get("detail") if isinstance(body, dict) else response.text
        raise ServiceFailure("usage", json.dumps(detail))


def _pct(x: float) -> str:
    return f"{100.0 * x:.2f}"


def _print_metric(report: dict) -> None:
    print(f"{report['metric']} aggregate {_pct(report['aggregate'])}")
    for name in sorted(report["per_class"]):
        print(f"  {name} {_pct(report['per_class'][name])}")


def _print_combined(metrics: dict) -> None:
    for key in ("micro_dice", "detection_f1", "panoptic_quality", "micro_pq"):
        if key in metrics:
            _print_metric(metrics[key])
    if "mean_track_score" in metrics:
        print(f"mean_track_score {_pct(metrics['mean_track_score'])}")


def _maybe_dump(args, response: dict) -> bool:
    if args.as_json:
        print(json.dumps(response, indent=2, sort_keys=True))
        return True
    return False


def _cmd_classify(args, client: ServiceClient) -> int:
    response = client.post(
        "/classify",
        {
            "pmap": args.pmap,
            "labels": args.labels,
            "epidermis_min_pixels": args.min_epidermis,
            "use_epidermis_rule": not args.no_epidermis_rule,
        },
    )
    if not _maybe_dump(args, response):
        print(response["frame_type"])
    return 0


def _cmd_fuse(args, client: ServiceClient) -> int:
    response = client.post(
        "/fuse",
        {
            "segformer": args.segformer,
            "unet": args.unet,
            "rules": args.rules,
            "out": args.out,
            "labels_out": args.labels,
        },
    )
    if not _maybe_dump(args, response):
        print(f"wrote {response['out']}")
        if response.get("labels_out"):
            print(f"wrote {response['labels_out']}")
    return 0


def _cmd_nuclei(args, client: ServiceClient) -> int:
    response = client.post(
        "/nuclei",
        {
            "instances_png": args.instances,
            "instances_json": args.inst_classes,
            "classmap_png": args.classmap,
            "classmap_pmap": args.classmap_pmap,
            "scheme": args.scheme,
            "margin": args.margin,
            "fallback_policy": args.fallback,
            "out_png": args.out,
            "out_json": args.out_classes,
        },
    )
    if not _maybe_dump(args, response):
        print(f"wrote {response['out_png']}")
        print(f"wrote {response['out_json']}")
        print(f"instances {response['instance_count']}")
    return 0


def _cmd_rescue(args, client: ServiceClient) -> int:
    response = client.post(
        "/rescue",
        {
            "stage1": args.stage1,
            "stage4": args.stage4,
            "scheme": args.scheme,
            "target_class": args.target_class,
            "out": args.out,
        },
    )
    if not _maybe_dump(args, response):
        print(f"wrote {response['out']}")
        print(f"rescued_pixels {response['rescued_pixels']}")
    return 0


def _cmd_eval(args, client: ServiceClient) -> int:
    payload = {
        "pred": args.pred,
        "gt": args.gt,
        "scheme": args.scheme,
        "radius": args.radius,
        "iou": args.iou,
    }
    if args.metric == "report":
        response = client.post("/eval/report", payload)
        rendered = response["metrics"]
    else:
        response = client.post(f"/eval/{args.metric}", payload)
        rendered = response
    if args.report:
        with open(args.report, "w") as f:
            json.dump(response, f, indent=2, sort_keys=True)
            f.write("\n")
    if not _maybe_dump(args, response):
        if args.metric == "report":
            _print_combined(rendered)
        else:
            _print_metric(rendered)
        if args.report:
            print(f"wrote {args.report}")
    return 0


def _cmd_pipeline(args, client: ServiceClient) -> int:
    response = client.post(
        "/pipeline/run",
        {"config_path": args.config, "out_dir": args.out, "jobs": args.jobs},
    )
    report = response["report"]
    if not _maybe_dump(args, response):
        print(f"config_hash {report['config_hash']}")
        print(f"frames {len(report['frames'])}")
        _print_combined(report.get("metrics", {}))
        print(f"wrote {os.path.join(args.out, 'report.json')}")
    return 0


def _cmd_synth(args, client: ServiceClient) -> int:
    defects = [d for d in (args.defects or "").split(",") if d]
    response = client.post(
        "/synth",
        {
            "out_dir": args.out,
            "seed": args.seed,
            "frames": args.frames,
            "size": args.size,
            "track": args.track,
            "defects": defects,
            "instances": args.instances,
        },
    )
    if not _maybe_dump(args, response):
        print(f"wrote {response['manifest']}")
    return 0


def _cmd_schemes(args, client: ServiceClient) -> int:
    if args.scheme_id is None:
        response = client.get("/schemes")
        if not _maybe_dump(args, response):
            for scheme_id in response["schemes"]:
                print(scheme_id)
    else:
        response = client.get(f"/schemes/{args.scheme_id}")
        if not _maybe_dump(args, response):
            for c in response["classes"]:
                print(f"{c['index']:3d} {c['name']} ({c['group']})")
    return 0


def _cmd_serve(args, client: ServiceClient) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panfuse",
        description="Auto-context fusion pipeline for panoptic histopathology outputs.",
    )
    parser.add_argument(
        "--server",
        default=os.environ.get("PANFUSE_SERVER"),
        help="base URL of a running service; default runs the app in-process",
    )
    parser.add_argument(
        "--json",
        dest="as_json",
        action="store_true",
        help="print the raw JSON response instead of the summary",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", help="route one frame: primary or metastatic")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--pmap", help="11-class probability map (argmax is applied)")
    group.add_argument("--labels", help="11-class label png")
    p.add_argument("--min-epidermis", type=int, default=1)
    p.add_argument("--no-epidermis-rule", action="store_true")
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("fuse", help="blend two tissue probability maps by class rules")
    p.add_argument("--segformer", required=True)
    p.add_argument("--unet")
    p.add_argument("--rules", default="default")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--labels", help="also write the argmax label png here")
    p.set_defaults(func=_cmd_fuse)

    p = sub.add_parser(
        "nuclei", help="reclassify instances by majority vote and rebuild borders"
    )
    p.add_argument("--instances", required=True, help="16-bit instance id png")
    p.add_argument("--inst-classes", required=True, help="instance class sidecar json")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--classmap", help="semantic label png (needs --scheme)")
    group.add_argument("--classmap-pmap", help="semantic probability map")
    p.add_argument("--scheme", help="scheme id of --classmap")
    p.add_argument("--margin", type=int, default=16)
    p.add_argument(
        "--fallback", default="keep_original", choices=["keep_original", "lowest_foreground"]
    )
    p.add_argument("-o", "--out", required=True)
    p.add_argument("-o-classes", "--out-classes", dest="out_classes", required=True)
    p.set_defaults(func=_cmd_nuclei)

    p = sub.add_parser("rescue", help="restore stage-1 components that stage 4 confirms")
    p.add_argument("--stage1", required=True)
    p.add_argument("--stage4", required=True)
    p.add_argument("--scheme", default="puma_tissue6")
    p.add_argument("--class", dest="target_class", default="necrosis")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=_cmd_rescue)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("metric", choices=["dice", "f1", "pq", "micropq", "report"])
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--scheme", default="puma_tissue6")
    p.add_argument("--radius", type=float, default=15.0)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--report", help="write the full-precision response here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("pipeline", help="run the four-stage pipeline over a manifest")
    p.add_argument("--config", required=True)
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("synth", help="generate a deterministic fixture manifest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=4)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--track", type=int, default=2, choices=[1, 2])
    p.add_argument("--defects", default="", help="comma-separated defect names")
    p.add_argument("--instances", type=int, default=5)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("schemes", help="list class schemes or show one")
    p.add_argument("scheme_id", nargs="?")
    p.set_defaults(func=_cmd_schemes)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8750)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    client = ServiceClient(args.server) if args.command != "serve" else None
    try:
        return args.func(args, client)
    except ServiceFailure as e:
        print(f"panfuse: {e.category}: {e.detail}", file=sys.stderr)
        return EXIT_CODE_BY_CATEGORY.get(e.category, 3)
    except httpx.HTTPError as e:
        print(f"panfuse: transport: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
