"""Command-line entry point: ``neuricam <subcommand>``.

Exit codes: 0 ok, 1 failed check, 2 config error, 3 data error, 4 desync,
5 decoder failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import shutil
import socket
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .capture import (
    CaptureConfig,
    DesyncError,
    DualStream,
    load_ground_truth,
    load_stream,
    nominal_timestamp,
    sample_keyframes,
    save_ground_truth,
    save_stream,
)
from .geometry import Homography, load_calibration
from .imgcore import Frame, InvalidInputError, StreamKind, load_png, save_png
from .metrics import CHANNEL_SETS, evaluate_sequence
from .reconstruct import (
    DecoderError,
    export_frames,
    get_decoder,
    import_external_reconstruction,
    reconstruct_sequence,
)
from .repair import repair_report, repair_with_flag
from .scenes import SCENES
from .wire import (
    ChannelModel,
    StreamLayout,
    WireFormatError,
    channel_transmit,
    group_packets,
    packetize,
    read_ncs,
    reassemble,
    receive_datagrams,
    send_datagrams,
    write_ncs,
)

log = logging.getLogger("neuricam")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DATA, EXIT_DESYNC, EXIT_DECODER = 0, 1, 2, 3, 4, 5


class ConfigError(ValueError):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out_dir: Path, command: str, config: dict, seed) -> Path:
    """Record config, seed, versions and a digest of every artifact under ``out_dir``."""
    out_dir = Path(out_dir)
    files = sorted(p for p in out_dir.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "command": command,
        "seed": seed,
        "config": config,
        "config_sha256": hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest(),
        "versions": {
            "neuricam": __version__,
            "numpy": np.__version__,
            "python": ".".join(platform.python_version_tuple()[:2]),
        },
        "artifacts": {p.relative_to(out_dir).as_posix(): _sha256(p) for p in files},
    }
    path = out_dir / "manifest.json"
    path.write_text(_dump(manifest))
    return path


def load_config(path) -> dict:
    if not path:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return cfg


def capture_config(args, cfg: dict) -> CaptureConfig:
    c = dict(cfg.get("capture", {}))
    if getattr(args, "key_interval", None) is not None:
        c["key_interval"] = args.key_interval
    if getattr(args, "seed", None) is not None:
        c["seed"] = args.seed
    noise = dict(c.get("noise", {}))
    if getattr(args, "noise_sigma", None) is not None:
        noise.update(enabled=True, read_noise_sigma=args.noise_sigma)
    if noise:
        c["noise"] = noise
    if noise.get("enabled") and "seed" not in c:
        raise ConfigError("sensor noise is stochastic: pass --seed or set capture.seed")
    try:
        return CaptureConfig.from_dict(c)
    except (TypeError, InvalidInputError) as exc:
        raise ConfigError(f"capture config: {exc}") from exc


def channel_model(args, cfg: dict) -> ChannelModel:
    c = dict(cfg.get("channel", {}))
    if getattr(args, "per", None) is not None:
        c["per_packet_loss_prob"] = args.per
    if getattr(args, "ber", None) is not None:
        c["bit_error_prob"] = args.ber
    if getattr(args, "seed", None) is not None:
        c["seed"] = args.seed
    stochastic = any(c.get(k, 0) > 0 for k in ("per_packet_loss_prob", "bit_error_prob", "burst_enter_prob"))
    if stochastic and "seed" not in c:
        raise ConfigError("lossy channel is stochastic: pass --seed or set channel.seed")
    try:
        return ChannelModel(**c)
    except (TypeError, InvalidInputError) as exc:
        raise ConfigError(f"channel config: {exc}") from exc


# --- stages ---------------------------------------------------------------


def _ground_truth(args):
    if args.gt:
        return load_ground_truth(args.gt)
    if args.scene:
        return SCENES[args.scene](args.frames), 15.0
    raise ConfigError("need --gt DIR or --scene NAME")


def stage_simulate(gt, fps, config: CaptureConfig, out: Path, parallel: int = 1, write_gt: bool = True) -> DualStream:
    if abs(fps - config.lr_fps) > 1e-9:
        raise ConfigError(f"ground truth runs at {fps} fps, capture expects {config.lr_fps}")
    stream = sample_keyframes(gt, config, parallel=parallel)
    save_stream(stream, out)
    if write_gt:
        save_ground_truth(gt, out / "gt", fps)
    log.info("simulated %d LR frames, %d key frames", len(stream.lr_frames), len(stream.key_frames))
    return stream


def transmit_order(stream: DualStream) -> list:
    keys = {k.frame_index: k for k in stream.key_frames}
    packets = []
    for f in stream.lr_frames:
        packets += packetize(f)
        if f.frame_index in keys:
            packets += packetize(keys[f.frame_index])
    return packets


def stage_transmit(stream: DualStream, model: ChannelModel, out_file: Path) -> dict:
    sent = transmit_order(stream)
    survived = channel_transmit(sent, model)
    write_ncs(survived, out_file)
    stats = {"sent": len(sent), "received": len(survived), "dropped": len(sent) - len(survived)}
    log.info("transmitted %(sent)d packets, %(dropped)d dropped", stats)
    return stats


def stage_receive(packets, stream_manifest: Path, out: Path) -> dict:
    """Reassemble and repair every expected frame; writes a stream directory."""
    meta = json.loads(Path(stream_manifest).read_text())
    config = CaptureConfig.from_dict(meta["config"])
    groups = group_packets(packets)
    lr_layout = StreamLayout(config.lr_res.width, config.lr_res.height, 1)
    key_layout = StreamLayout(config.hr_res.width, config.hr_res.height, 3)
    report = {"frames": []}

    def receive(entry, is_key):
        idx = entry["index"]
        layout = key_layout if is_key else lr_layout
        pk = groups.get((is_key, idx), [])
        frame, losses, ts_known = reassemble(pk, layout, key=is_key, frame_index=idx)
        if not ts_known:
            log.warning("frame %d (%s): terminal packet lost, using nominal timestamp", idx, "key" if is_key else "lr")
            frame = Frame(frame.samples, frame.colorspace, nominal_timestamp(idx, config.lr_fps), frame.stream, idx)
        fixed = repair_with_flag(frame, losses)
        report["frames"].append(
            {
                "stream": "key" if is_key else "lr",
                "index": idx,
                "losses": {str(k): v for k, v in losses.items()},
                "lost_lines": sum(losses.values()),
                "timestamp_known": ts_known,
                "fully_lost": fixed.fully_lost,
            }
        )
        return fixed.frame

    lr = [receive(e, False) for e in meta["lr"]]
    keys = [receive(e, True) for e in meta["key"]]
    received = DualStream(lr, keys, config)
    save_stream(received, out)
    report["total_lost_lines"] = sum(f["lost_lines"] for f in report["frames"])
    (out / "losses.json").write_text(_dump(report))
    return report


def stage_reconstruct(stream: DualStream, decoder_name: str, calib: Homography, out: Path, warp="lr", parallel=1):
    if decoder_name.startswith("external:"):
        frames = import_external_reconstruction(
            decoder_name.split(":", 1)[1], len(stream.lr_frames), stream.config.hr_res
        )
    else:
        frames = reconstruct_sequence(stream, get_decoder(decoder_name), calib, warp=warp, parallel=parallel)
    export_frames(frames, out)
    return frames


def stage_evaluate(pred, gt, key_interval: int, channels, out: Path, with_ssim=True, figure=True) -> dict:
    from .plotting import plot_psnr_progression

    out.mkdir(parents=True, exist_ok=True)
    reports = [evaluate_sequence(pred, gt, key_interval, cs, with_ssim=with_ssim) for cs in channels]
    summary = {}
    for rep in reports:
        rep.write_json(out / f"report_{rep.channel_set.lower()}.json")
        rep.write_csv(out / f"report_{rep.channel_set.lower()}.csv")
        summary[rep.channel_set] = rep.summary()
    if figure:
        plot_psnr_progression(reports, out / "psnr_vs_frame.png")
    (out / "summary.json").write_text(_dump(summary))
    return summary


def _load_frames(directory) -> list:
    paths = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".png")
    if not paths:
        raise InvalidInputError(f"{directory}: no PNG frames")
    return [load_png(p, StreamKind.GT, i) for i, p in enumerate(paths)]


def _calibration(path) -> Homography:
    if not path:
        return Homography.identity()
    try:
        return load_calibration(path)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"calibration {path}: {exc}") from exc


# --- subcommands ----------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    config = capture_config(args, cfg)
    out = Path(args.out)
    gt, fps = _ground_truth(args)
    stage_simulate(gt, fps, config, out, parallel=args.parallel)
    write_manifest(out, "simulate", {"capture": config.to_dict(), "scene": args.scene, "frames": len(gt)}, config.seed)
    print(f"wrote {out / 'stream.json'}")
    return EXIT_OK


def cmd_transmit(args) -> int:
    cfg = load_config(args.config)
    model = channel_model(args, cfg)
    stream = load_stream(args.stream)
    if args.udp:
        host, port = args.udp.rsplit(":", 1)
        sent = transmit_order(stream)
        survived = channel_transmit(sent, model)
        send_datagrams(survived, (host, int(port)))
        print(f"sent {len(survived)}/{len(sent)} packets to {args.udp}")
        return EXIT_OK
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    stats = stage_transmit(stream, model, out)
    print(json.dumps(stats, sort_keys=True))
    return EXIT_OK


def cmd_receive(args) -> int:
    if args.udp_listen:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.bind(("127.0.0.1", args.udp_listen))
        try:
            packets = receive_datagrams(sock, timeout=args.timeout)
        finally:
            sock.close()
    elif args.input:
        packets = read_ncs(args.input)
    else:
        raise ConfigError("need --in FILE or --udp-listen PORT")
    manifest = Path(args.stream_manifest)
    if manifest.is_dir():
        manifest = manifest / "stream.json"
    out = Path(args.out)
    report = stage_receive(packets, manifest, out)
    write_manifest(out, "receive", {"packets": len(packets)}, None)
    print(f"received {len(packets)} packets; {report['total_lost_lines']} lines repaired")
    return EXIT_OK


def cmd_repair(args) -> int:
    damaged = load_png(args.frame)
    try:
        losses = json.loads(Path(args.losses).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"loss map {args.losses}: {exc}") from exc
    losses = losses.get("losses", losses)
    losses = {int(k): int(v) for k, v in losses.items()}
    result = repair_with_flag(damaged, losses)
    save_png(result.frame, args.out)
    stats = {"lost_lines": sum(losses.values()), "fully_lost": result.fully_lost}
    if args.reference:
        ref = load_png(args.reference)
        stats.update(repair_report(damaged, result.frame, ref, losses).to_dict())
        if args.figure:
            from .plotting import plot_repair

            plot_repair(damaged, result.frame, ref, args.figure, losses)
    text = _dump(stats)
    if args.stats:
        Path(args.stats).write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    cfg = load_config(args.config)
    stream = load_stream(args.stream)
    decoder = args.decoder or cfg.get("decoder", "baseline")
    out = Path(args.out)
    stage_reconstruct(stream, decoder, _calibration(args.calib), out, warp=args.warp, parallel=args.parallel)
    write_manifest(out, "reconstruct", {"decoder": decoder, "warp": args.warp}, None)
    print(f"wrote {len(stream.lr_frames)} frames to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    channels = [c.strip().upper() for c in args.channels.split(",")]
    for c in channels:
        if c not in CHANNEL_SETS:
            raise ConfigError(f"unknown channel set {c!r}")
    pred, gt = _load_frames(args.pred), _load_frames(args.gt)
    out = Path(args.out)
    summary = stage_evaluate(pred, gt, args.key_interval, channels, out, with_ssim=not args.no_ssim)
    print(_dump(summary), end="")
    return EXIT_OK


def cmd_power_report(args) -> int:
    from .powermodel import SystemProfile, default_profile, power_report

    try:
        profile = SystemProfile.load(args.profile) if args.profile else default_profile()
    except (OSError, json.JSONDecodeError, TypeError, KeyError) as exc:
        raise ConfigError(f"power profile: {exc}") from exc
    rep = power_report(profile)
    md = rep.to_markdown()
    if args.out:
        from .plotting import plot_power_breakdown

        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "power.md").write_text(md)
        (out / "power.json").write_text(_dump(rep.to_dict()))
        plot_power_breakdown(profile, out / "power.png")
    print(_dump(rep.to_dict()) if args.format == "json" else md, end="")
    return EXIT_OK


def cmd_kernel_check(args) -> int:
    from .nnkernels import kernel_check

    ok = True
    for name, passed, detail in kernel_check(seeds=args.seeds):
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
    return EXIT_OK if ok else EXIT_CHECK


def cmd_end_to_end(args) -> int:
    cfg = load_config(args.config)
    config = capture_config(args, cfg)
    model = channel_model(args, cfg)
    decoder = args.decoder or cfg.get("decoder", "baseline")
    out = Path(args.out)
    if out.exists():
        shutil.rmtree(out)
    gt, fps = _ground_truth(args)
    stage_simulate(gt, fps, config, out / "capture", parallel=args.parallel)
    stats = stage_transmit(load_stream(out / "capture"), model, out / "wire" / "stream.ncs")
    stage_receive(read_ncs(out / "wire" / "stream.ncs"), out / "capture" / "stream.json", out / "received")
    received = load_stream(out / "received")
    pred = stage_reconstruct(received, decoder, _calibration(args.calib), out / "reconstructed", args.warp, args.parallel)
    channels = [c.strip().upper() for c in args.channels.split(",")]
    summary = stage_evaluate(pred, gt, config.key_interval, channels, out / "evaluation", with_ssim=not args.no_ssim)
    (out / "wire" / "channel.json").write_text(_dump(stats))
    run_config = {
        "capture": config.to_dict(),
        "channel": {k: getattr(model, k) for k in model.__dataclass_fields__},
        "decoder": decoder,
        "warp": args.warp,
        "scene": args.scene,
        "frames": len(gt),
    }
    write_manifest(out, "end-to-end", run_config, config.seed)
    print(_dump(summary), end="")
    return EXIT_OK


# --- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neuricam", description="Dual-mode camera simulator and protocol toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def gt_args(sp):
        sp.add_argument("--gt", help="ground-truth directory (numbered PNGs + sidecar.json)")
        sp.add_argument("--scene", choices=sorted(SCENES), help="synthetic ground truth instead of --gt")
        sp.add_argument("--frames", type=int, default=31, help="frames for --scene (default 31)")
        sp.add_argument("--key-interval", type=int)
        sp.add_argument("--noise-sigma", type=float, help="enable read noise with this sigma (gray levels)")

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--parallel", type=int, default=1)

    sp = sub.add_parser("simulate", help="synthesise the dual-mode streams from ground truth")
    gt_args(sp)
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("transmit", help="packetise a stream through the lossy channel")
    common(sp)
    sp.add_argument("--stream", required=True, help="stream directory or stream.json")
    sp.add_argument("--out", help=".ncs output file")
    sp.add_argument("--per", type=float, help="per-packet loss probability")
    sp.add_argument("--ber", type=float, help="per-packet bit-flip probability")
    sp.add_argument("--udp", help="send datagrams to HOST:PORT instead of writing a file")
    sp.set_defaults(func=cmd_transmit)

    sp = sub.add_parser("receive", help="reassemble and repair frames from packets")
    sp.add_argument("--in", dest="input", help=".ncs stream file")
    sp.add_argument("--udp-listen", type=int, help="listen for datagrams on this localhost port")
    sp.add_argument("--timeout", type=float, default=5.0)
    sp.add_argument("--stream-manifest", required=True, help="sender's stream.json (frame layout)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_receive)

    sp = sub.add_parser("repair", help="repair lost lines in one frame")
    sp.add_argument("--frame", required=True)
    sp.add_argument("--losses", required=True, help='loss map JSON, {"start": count}')
    sp.add_argument("--out", required=True)
    sp.add_argument("--stats")
    sp.add_argument("--reference")
    sp.add_argument("--figure", help="before/after PNG figure (needs --reference)")
    sp.set_defaults(func=cmd_repair)

    sp = sub.add_parser("reconstruct", help="run a decoder over a stream")
    common(sp)
    sp.add_argument("--stream", required=True)
    sp.add_argument("--calib")
    sp.add_argument("--decoder", help="baseline | identity | external:<dir>")
    sp.add_argument("--warp", choices=("lr", "key"), default="lr")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_reconstruct)

    sp = sub.add_parser("evaluate", help="PSNR/SSIM report with key frames excluded")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--key-interval", type=int, default=15)
    sp.add_argument("--channels", default="Y,AB,RGB")
    sp.add_argument("--no-ssim", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("power-report", help="power and bandwidth arithmetic")
    sp.add_argument("--profile", help="JSON power profile (default: prototype table)")
    sp.add_argument("--format", choices=("md", "json"), default="md")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_power_report)

    sp = sub.add_parser("kernel-check", help="run the network-kernel property suite")
    sp.add_argument("--seeds", type=int, default=50)
    sp.set_defaults(func=cmd_kernel_check)

    sp = sub.add_parser("end-to-end", help="simulate, transmit, receive, reconstruct and evaluate")
    gt_args(sp)
    common(sp)
    sp.add_argument("--per", type=float)
    sp.add_argument("--ber", type=float)
    sp.add_argument("--decoder")
    sp.add_argument("--calib")
    sp.add_argument("--warp", choices=("lr", "key"), default="lr")
    sp.add_argument("--channels", default="Y,AB,RGB")
    sp.add_argument("--no-ssim", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_end_to_end)
    return p


def main(argv=None) -> int:
    level = os.environ.get("NEURICAM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DesyncError as exc:
        print(f"desync: {exc}", file=sys.stderr)
        return EXIT_DESYNC
    except DecoderError as exc:
        print(f"decoder failure: {exc}", file=sys.stderr)
        return EXIT_DECODER
    except (InvalidInputError, WireFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
