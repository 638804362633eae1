"""Command-line entry point binding all modules into user workflows.

Exit codes: 0 success, 1 operational error (bad input, parse failure),
2 usage error. Machine-readable output goes to stdout, diagnostics to
stderr; --json forces stdout to be valid JSON or JSON-lines. A JSON
config file (via --config or the HS_CONFIG environment variable) supplies
defaults; explicit flags always win.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from hilscan import __version__, binvis, classifier, evalkit, inventory, profiler
from hilscan import engine as engine_mod
from hilscan.capture import DeviceKey, attribute_window, parse_capture
from hilscan.errors import HilscanError
from hilscan.profiler import ProfileKind, ProfilerConfig, ProfileStore


def _load_config(path):
    if path is None:
        path = os.environ.get("HS_CONFIG")
    if not path:
        return {}
    return json.loads(Path(path).read_text())


def _setting(args, config, name, default):
    value = getattr(args, name.replace("-", "_"), None)
    if value is not None:
        return value
    if name in config:
        return config[name]
    return default


def _engine_config(args, config):
    return engine_mod.EngineConfig(
        profiler=ProfilerConfig(
            threshold_percent=float(_setting(args, config, "threshold", 80.0)),
            capture_window_seconds=int(_setting(args, config, "window", 60)),
        ),
        decision_threshold=float(_setting(args, config, "decision_threshold", 0.5)),
        chunk_size=int(_setting(args, config, "chunk_size", binvis.DEFAULT_CHUNK_SIZE)),
        payload_only=bool(_setting(args, config, "payload_only", False)),
        id_mode=str(_setting(args, config, "id_mode", "ipv4")),
    )


def _read_capture(path):
    return parse_capture(Path(path).read_bytes())


def _load_store(path):
    if path and Path(path).exists():
        return ProfileStore.load(path)
    return ProfileStore()


def _whole_capture_tallies(capture, id_mode, window=None):
    """Tally the capture as one window spanning its duration (or a fixed
    window length when given, yielding one tally set per window)."""
    if not capture.packets:
        return []
    first = capture.packets[0].ts_seconds
    last = max(p.timestamp for p in capture.packets)
    if window is None:
        span = max(1, int(last) - first + 1)
        return [attribute_window(capture, first, span, id_mode)]
    results = []
    start = first
    while start <= last:
        results.append(attribute_window(capture, start, window, id_mode))
        start += window
    return results


def cmd_profile_build(args, config):
    store = _load_store(args.profiles)
    kinds = [ProfileKind.parse(k) for k in (args.kind or ["H", "D", "W"])]
    capture = _read_capture(args.pcap)
    id_mode = str(_setting(args, config, "id_mode", "ipv4"))
    for result in _whole_capture_tallies(capture, id_mode):
        for kind in kinds:
            profiler.build_baseline(
                result.tallies.values(), kind, store,
                built_at=max(p.timestamp for p in capture.packets),
                source_capture_id=args.source or Path(args.pcap).name)
    store.save(args.profiles)
    print(json.dumps({"profiles": args.profiles,
                      "devices": [str(d) for d in store.devices()],
                      "kinds": [k.value for k in kinds]}))
    return 0


def cmd_profile_check(args, config):
    store = _load_store(args.profiles)
    capture = _read_capture(args.pcap)
    cfg = ProfilerConfig(
        threshold_percent=float(_setting(args, config, "threshold", 80.0)),
        capture_window_seconds=int(_setting(args, config, "window", 60)),
    )
    id_mode = str(_setting(args, config, "id_mode", "ipv4"))
    window = args.window if args.window else None
    flagged = 0
    for result in _whole_capture_tallies(capture, id_mode, window):
        for device in sorted(result.tallies, key=str):
            report = profiler.evaluate(device, result.tallies[device],
                                       store.profile(device), cfg)
            if report.out_of_profile:
                flagged += 1
                print(json.dumps(report.to_json_dict()))
    print(json.dumps({"flagged": flagged}), file=sys.stderr)
    return 0


def cmd_binvis(args, config):
    if args.binvis_action != "render":
        raise HilscanError(f"unknown binvis action {args.binvis_action!r}")
    raw = Path(args.input).read_bytes()
    chunk_size = int(_setting(args, config, "chunk_size", binvis.DEFAULT_CHUNK_SIZE))
    if raw[:4] in (b"\xd4\xc3\xb2\xa1", b"\xa1\xb2\xc3\xd4"):
        capture = parse_capture(raw)
        payload = binvis.capture_byte_stream(capture, payload_only=args.payload_only)
    else:
        payload = raw
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for index, chunk in enumerate(binvis.chunk_stream(payload, chunk_size,
                                                      capture_id=Path(args.input).name)):
        image = binvis.render_chunk(chunk)
        dest = out_dir / f"{index:06d}.{args.format}"
        binvis.write_image(image, args.format, dest)
        written.append(str(dest))
    print(json.dumps({"chunks": len(written), "out_dir": str(out_dir),
                      "format": args.format}))
    return 0


def _features_from_dir(directory, cfg):
    vectors = []
    for path in sorted(Path(directory).iterdir()):
        if not path.is_file():
            continue
        capture = parse_capture(path.read_bytes())
        stream = binvis.capture_byte_stream(capture, payload_only=cfg.payload_only)
        for chunk in binvis.chunk_stream(stream, cfg.chunk_size, capture_id=path.name):
            vectors.append(classifier.extract_features(binvis.render_chunk(chunk)))
    return vectors


def cmd_train(args, config):
    cfg = _engine_config(args, config)
    pairs = [(v, classifier.LABEL_NORMAL) for v in _features_from_dir(args.normal_dir, cfg)]
    pairs += [(v, classifier.LABEL_MALICIOUS)
              for v in _features_from_dir(args.malicious_dir, cfg)]
    if not pairs:
        raise HilscanError("no chunks found to train on")
    data = classifier.LabeledSet.from_pairs(pairs)
    warm = None
    if args.warm_start:
        warm = classifier.load_model(Path(args.warm_start).read_text())
    train_cfg = classifier.TrainConfig(
        learning_rate=float(_setting(args, config, "lr", 0.5)),
        epochs=int(_setting(args, config, "epochs", 200)),
        seed=int(_setting(args, config, "seed", 0)),
    )
    model = classifier.train(data, train_cfg, warm_start=warm)
    Path(args.out).write_text(classifier.save_model(model))
    loss = classifier.cross_entropy_loss(model.weights, model.bias,
                                         data.features, data.labels)
    print(json.dumps({"model": args.out, "samples": len(pairs),
                      "class_counts": data.class_counts,
                      "trained_epochs": model.trained_epochs,
                      "loss": loss}))
    return 0


def cmd_classify(args, config):
    cfg = _engine_config(args, config)
    model = classifier.load_model(Path(args.model).read_text())
    capture = _read_capture(args.pcap)
    stream = binvis.capture_byte_stream(capture, payload_only=cfg.payload_only)
    threshold = float(_setting(args, config, "decision_threshold", 0.5))
    malicious = 0
    chunks = binvis.chunk_stream(stream, cfg.chunk_size, capture_id=Path(args.pcap).name)
    for index, chunk in enumerate(chunks):
        features = classifier.extract_features(binvis.render_chunk(chunk))
        pred = classifier.predict(model, features, threshold)
        malicious += pred.label == classifier.LABEL_MALICIOUS
        print(json.dumps({"chunk_index": index, "byte_offset": chunk.origin[1],
                          "p_malicious": pred.p_malicious, "label": pred.label}))
    print(json.dumps({"chunks": len(chunks), "malicious": malicious}), file=sys.stderr)
    return 0


def cmd_scan(args, config):
    device = DeviceKey.parse(args.device)
    if args.backend == "fixture":
        if not args.inventory:
            raise HilscanError("fixture backend needs --inventory")
        backend = inventory.FixtureScanBackend(args.inventory)
    else:
        ports = [int(p) for p in (args.ports or "").split(",") if p]
        backend = inventory.TcpConnectBackend(ports, timeout=args.timeout)
    services = inventory.scan_device(device, backend)
    if args.cve_feed:
        feed = inventory.ingest_cve_feed(Path(args.cve_feed).read_bytes())
        report = inventory.match_vulnerabilities(services, feed.records, device=device,
                                                 substring=args.substring)
        print(json.dumps(report.to_json_dict()))
    else:
        print(json.dumps([s.to_json_dict() for s in services]))
    return 0


def cmd_run(args, config):
    cfg = _engine_config(args, config)
    store = _load_store(args.profiles)
    model = None
    model_path = _setting(args, config, "model", None)
    if model_path:
        model = classifier.load_model(Path(model_path).read_text())
    capture = _read_capture(args.pcap)
    sink_path = _setting(args, config, "alerts", None)
    log = engine_mod.AlertLog(sink_path) if sink_path else None
    try:
        alerts = engine_mod.run_offline(capture, store, model, cfg,
                                        alert_log=log, capture_id=Path(args.pcap).name)
    finally:
        if log is not None:
            log.close()
    for alert in alerts:
        print(json.dumps(alert.to_json_dict()))
    print(json.dumps({"alerts": len(alerts)}), file=sys.stderr)
    return 0


def cmd_replay(args, config):
    capture = _read_capture(args.pcap)
    delivered = []
    plan = engine_mod.ReplayPlan(capture_id=Path(args.pcap).name, speed=args.speed,
                                 sink=delivered.append)
    log = engine_mod.replay(capture, plan)
    for record in log:
        print(json.dumps({"index": record.index,
                          "intended_offset": record.intended_offset,
                          "actual_offset": record.actual_offset}))
    print(json.dumps({"packets": len(log), "speed": args.speed}), file=sys.stderr)
    return 0


def cmd_eval(args, config):
    cfg = _engine_config(args, config)
    store = _load_store(args.profiles)
    model = None
    model_path = _setting(args, config, "model", None)
    if model_path:
        model = classifier.load_model(Path(model_path).read_text())
    convention = (evalkit.CONVENTION_POSITIVE_MALICIOUS if args.convention == "standard"
                  else evalkit.CONVENTION_POSITIVE_NORMAL)
    result = evalkit.evaluate_corpus(args.normal_dir, args.malicious_dir, store, model,
                                     cfg, decision_mode=args.decision_mode,
                                     convention=convention)
    if args.csv:
        Path(args.csv).write_text(result.decisions_csv())
    if args.json:
        print(evalkit.report_json(result))
    else:
        print(result.metrics.to_table())
        print(json.dumps(result.to_json_dict()), file=sys.stderr)
    return 0


def cmd_serve(args, config):
    store = _load_store(args.profiles)
    log = engine_mod.AlertLog(_setting(args, config, "alerts", None))
    service = engine_mod.serve_status(store, log, args.bind)
    print(f"status API listening on {service.url}", file=sys.stderr)
    try:
        import threading
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        service.close()
        log.close()
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hilscan",
        description="Traffic-rate profiling and Hilbert-image traffic classification.")
    parser.add_argument("--version", action="version", version=f"hilscan {__version__}")
    parser.add_argument("--config", help="JSON config file (or set HS_CONFIG)")
    parser.add_argument("--seed", type=int, help="seed recorded into trained models")
    parser.add_argument("--json", action="store_true",
                        help="force machine-readable stdout")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile-build", help="build rate baselines from a capture")
    p.add_argument("--pcap", required=True)
    p.add_argument("--profiles", required=True, help="profile store JSON path")
    p.add_argument("--kind", action="append", choices=["H", "D", "W"],
                   help="baseline kind to build (repeatable; default all)")
    p.add_argument("--id-mode", choices=["ipv4", "mac"])
    p.add_argument("--source", help="capture id recorded with the baseline")
    p.set_defaults(func=cmd_profile_build)

    p = sub.add_parser("profile-check", help="flag out-of-profile devices in a capture")
    p.add_argument("--pcap", required=True)
    p.add_argument("--profiles", required=True)
    p.add_argument("--threshold", type=float, help="flag deltas above this percent")
    p.add_argument("--window", type=int,
                   help="evaluate fixed windows of this many seconds "
                        "(default: the whole capture)")
    p.add_argument("--id-mode", choices=["ipv4", "mac"])
    p.set_defaults(func=cmd_profile_check)

    p = sub.add_parser("binvis", help="render payload bytes as byte-class images")
    vis_sub = p.add_subparsers(dest="binvis_action", required=True)
    render = vis_sub.add_parser("render", help="chunk and render a capture or raw file")
    render.add_argument("--input", required=True, help="pcap or raw binary file")
    render.add_argument("--out-dir", required=True)
    render.add_argument("--chunk-size", type=int)
    render.add_argument("--format", choices=["ppm", "png"], default="ppm")
    render.add_argument("--payload-only", action="store_true",
                        help="chunk transport payloads instead of whole frames")
    render.set_defaults(func=cmd_binvis)

    p = sub.add_parser("train", help="train the chunk classifier from labeled captures")
    p.add_argument("--normal-dir", required=True)
    p.add_argument("--malicious-dir", required=True)
    p.add_argument("--out", required=True, help="model JSON output path")
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--epochs", type=int)
    p.add_argument("--warm-start", help="continue from this saved model")
    p.add_argument("--chunk-size", type=int)
    p.add_argument("--payload-only", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="score each chunk of a capture")
    p.add_argument("--pcap", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--decision-threshold", type=float)
    p.add_argument("--chunk-size", type=int)
    p.add_argument("--payload-only", action="store_true")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("scan", help="enumerate device services, optionally match a CVE feed")
    p.add_argument("--device", required=True, help="e.g. ipv4:10.0.0.5 or 10.0.0.5")
    p.add_argument("--backend", choices=["fixture", "connect"], default="fixture")
    p.add_argument("--inventory", help="fixture inventory JSON path")
    p.add_argument("--ports", help="comma-separated ports for the connect backend")
    p.add_argument("--timeout", type=float, default=0.5)
    p.add_argument("--cve-feed", help="normalized CVE feed JSON path")
    p.add_argument("--substring", action="store_true",
                   help="match product names by containment (exploratory)")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("run", help="full offline pipeline: profiler + classifier alerts")
    p.add_argument("--pcap", required=True)
    p.add_argument("--profiles")
    p.add_argument("--model")
    p.add_argument("--alerts", help="append alerts to this JSON-lines file")
    p.add_argument("--threshold", type=float)
    p.add_argument("--window", type=int)
    p.add_argument("--decision-threshold", type=float)
    p.add_argument("--chunk-size", type=int)
    p.add_argument("--payload-only", action="store_true")
    p.add_argument("--id-mode", choices=["ipv4", "mac"])
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("replay", help="re-deliver a capture at recorded or scaled timing")
    p.add_argument("--pcap", required=True)
    p.add_argument("--speed", type=float, default=1.0,
                   help="timing multiplier; 1.0 keeps recorded gaps")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("eval", help="score the pipeline over labeled corpora")
    p.add_argument("--normal-dir", required=True)
    p.add_argument("--malicious-dir", required=True)
    p.add_argument("--model")
    p.add_argument("--profiles")
    p.add_argument("--threshold", type=float)
    p.add_argument("--window", type=int)
    p.add_argument("--decision-threshold", type=float)
    p.add_argument("--chunk-size", type=int)
    p.add_argument("--payload-only", action="store_true")
    p.add_argument("--decision-mode", choices=["any-alert", "chunk-vote"],
                   default="any-alert")
    p.add_argument("--convention", choices=["paper", "standard"], default="paper",
                   help="positive class: paper=normal traffic, standard=malicious")
    p.add_argument("--csv", help="write per-file decisions CSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="read-only status API over profiles and alerts")
    p.add_argument("--profiles")
    p.add_argument("--alerts")
    p.add_argument("--bind", default="127.0.0.1:8650")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        return args.func(args, config)
    except HilscanError as exc:
        print(f"hilscan: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"hilscan: error: {exc}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"hilscan: error: bad JSON input: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
