"""Command-line entry points for every pipeline stage.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from . import pipeline as pl
from .config import load_settings
from .errors import DsrError
from .evaluate import evaluate_systems
from .params import load_bundle
from .training import reconstruct


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dsr",
        description="Desk-scale dysarthric speech reconstruction pipeline",
    )
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--profile", choices=("desk", "full", "smoke"))
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workdir")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-corpus", help="synthesize the toy corpus")
    sub.add_parser("features", help="extract features and normalization stats")

    for name, help_text in (
        ("train-se", "pretrain the speech encoder on healthy speech"),
        ("train-prosody", "train duration and pitch predictors"),
        ("train-spk", "train the speaker encoder (GE2E)"),
        ("train-gen", "train the speech generator"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--resume", action="store_true")

    p = sub.add_parser("finetune-se", help="fine-tune the speech encoder")
    p.add_argument("--speaker", required=True, help="dysarthric speaker tag")
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("adapt-asa", help="adversarial speaker adaptation")
    p.add_argument("--speaker", default="all")
    p.add_argument("--mode", choices=("two_pass", "grl"), default="two_pass")
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("reconstruct", help="reconstruct one utterance")
    p.add_argument("--utt", required=True)
    p.add_argument("--mode", choices=("GG", "GP", "PP"), default="PP")
    p.add_argument("--system", choices=("sv", "asa"), default="sv")
    p.add_argument("--no-wav", action="store_true", help="skip Griffin-Lim")

    p = sub.add_parser("eval", help="side-by-side objective evaluation")
    p.add_argument("--system", choices=("sv", "asa", "both"), default="both")
    p.add_argument("--speaker", default="all")
    p.add_argument("--mode", choices=("GG", "GP", "PP"), default="PP")
    return parser


def _dysarthric_speakers(store, requested: str) -> list[str]:
    speakers = sorted({e.speaker for e in store.entries(role="dysarthric")})
    if requested == "all":
        return speakers
    if requested not in speakers:
        raise DsrError(
            f"unknown dysarthric speaker {requested!r}; available: {speakers}"
        )
    return [requested]


def _cmd_reconstruct(settings, store, args) -> int:
    entry = next(
        (e for e in store.manifest.entries if e.utt_id == args.utt), None
    )
    if entry is None:
        raise DsrError(f"unknown utterance id {args.utt!r}")
    if args.system == "asa":
        path = settings.checkpoint(f"asa_{entry.speaker}")
        if not path.exists():
            raise DsrError(
                f"no ASA-DSR checkpoint for speaker {entry.speaker}; run adapt-asa"
            )
        bundle = load_bundle(path)
    else:
        sv_path = settings.checkpoint(f"sv_{entry.speaker}")
        bundle = (
            load_bundle(sv_path)
            if sv_path.exists()
            else pl.assemble_sv_bundle(settings, entry.speaker)
        )
    recon = reconstruct(store, args.utt, bundle, args.mode, with_wav=not args.no_wav)
    out_dir = settings.workdir / "recon"
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{args.utt}_{args.system}_{args.mode}"
    np.savez(out_dir / f"{stem}.npz", mel=recon.mel, mel_norm=recon.mel_norm)
    if recon.wav is not None:
        pcm = np.clip(np.round(recon.wav.samples * 32767.0), -32768, 32767)
        wavfile.write(out_dir / f"{stem}.wav", 16000, pcm.astype(np.int16))
        print(out_dir / f"{stem}.wav")
    else:
        print(out_dir / f"{stem}.npz")
    return 0


def _cmd_eval(settings, store, args) -> int:
    exit_code = 0
    for speaker in _dysarthric_speakers(store, args.speaker):
        bundles = pl.load_system_bundles(settings, speaker)
        if "SV-DSR" not in bundles:
            try:
                bundles["SV-DSR"] = pl.assemble_sv_bundle(settings, speaker)
            except DsrError as exc:
                raise DsrError(f"cannot evaluate {speaker}: {exc}") from exc
        wanted = {"sv": ["SV-DSR"], "asa": ["ASA-DSR"], "both": ["SV-DSR", "ASA-DSR"]}
        missing = [w for w in wanted[args.system] if w not in bundles]
        if missing:
            raise DsrError(
                f"missing checkpoints for {missing} on speaker {speaker}; "
                "run adapt-asa first"
            )
        selected = {name: bundles[name] for name in wanted[args.system]}
        disc_net = None
        disc_path = settings.checkpoint(f"disc_{speaker}")
        if disc_path.exists():
            from .params import load_component

            disc_net = load_component(disc_path).net
        phi_p = None
        if settings.checkpoint("phi_p").exists():
            from .params import load_component as _load

            phi_p = _load(settings.checkpoint("phi_p"))
        report = evaluate_systems(
            store,
            speaker,
            selected,
            judge_bundle=bundles["SV-DSR"],
            disc_net=disc_net,
            mode=args.mode,
            prosody_encoder=phi_p,
        )
        out_dir = settings.workdir / "eval"
        report.write(out_dir / f"{speaker}.jsonl", out_dir / f"{speaker}.txt")
        print(f"== speaker {speaker}")
        print(report.table())
    return exit_code


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        settings = load_settings(
            config_path=args.config,
            profile=args.profile,
            seed=args.seed,
            workdir=args.workdir,
        )
        command = args.command
        if command == "gen-corpus":
            manifest = pl.gen_corpus(settings)
            print(settings.manifest_path, f"({len(manifest.entries)} utterances)")
            return 0
        if command == "features":
            pl.build_feature_store(settings)
            print(settings.features_dir / "stats.json")
            return 0

        store = pl.open_feature_store(settings)
        if command == "train-se":
            _, report = pl.stage_pretrain(settings, store, resume=args.resume)
        elif command == "finetune-se":
            _dysarthric_speakers(store, args.speaker)
            _, report = pl.stage_finetune(
                settings, store, args.speaker, resume=args.resume
            )
        elif command == "train-prosody":
            _, _, report, _ = pl.stage_prosody(settings, store, resume=args.resume)
        elif command == "train-spk":
            _, report = pl.stage_speaker(settings, store, resume=args.resume)
        elif command == "train-gen":
            _, report = pl.stage_generator(settings, store, resume=args.resume)
        elif command == "adapt-asa":
            for speaker in _dysarthric_speakers(store, args.speaker):
                _, _, _, report = pl.stage_asa(
                    settings, store, speaker, mode=args.mode, resume=args.resume
                )
                last = report.losses[-1] if report.losses else {}
                print(f"adapted {speaker}: {last}")
            return 0
        elif command == "reconstruct":
            return _cmd_reconstruct(settings, store, args)
        elif command == "eval":
            return _cmd_eval(settings, store, args)
        else:  # pragma: no cover - argparse enforces choices
            parser.error(f"unknown command {command!r}")
        if report.losses:
            first = report.losses[0]
            last = report.losses[-1]
            print(f"{command}: {len(report.losses)} steps, loss {first:.4f} -> {last:.4f}")
        else:
            print(f"{command}: up to date (0 steps run)")
        return 0
    except DsrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # unexpected; still a runtime failure
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
