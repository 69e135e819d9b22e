"""Run the full desk-profile pipeline and print quality diagnostics.

Usage: python3 scripts/desk_run.py WORKDIR [SEED]
"""

import sys
import time

import numpy as np
import torch

from dsr import evaluate as ev
from dsr import pipeline as pl
from dsr import training as tr
from dsr.config import Settings


def main():
    workdir = sys.argv[1]
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 1234
    settings = Settings(profile="desk", workdir=workdir, seed=seed)
    t0 = time.time()

    def mark(msg):
        print(f"[{time.time() - t0:7.1f}s] {msg}", flush=True)

    pl.gen_corpus(settings)
    mark("corpus generated")
    store = pl.build_feature_store(settings)
    mark("features built")

    phi_p, rep = pl.stage_pretrain(settings, store)
    mark(f"pretrain: {rep.losses[0]:.3f} -> {rep.losses[-1]:.3f}")

    # greedy decode PER of the pretrained encoder on held-out healthy utts
    recog_per = decode_per(store, phi_p, store.entries(role="healthy", split="eval")[:20])
    mark(f"phi_p greedy PER on healthy eval: {recog_per:.3f}")

    speakers = sorted({e.speaker for e in store.entries(role="dysarthric")})
    for spk in speakers:
        phi_sd, rep = pl.stage_finetune(settings, store, spk)
        per_p = decode_per(store, phi_p, store.entries(role="dysarthric", split="eval", speaker=spk))
        per_sd = decode_per(store, phi_sd, store.entries(role="dysarthric", split="eval", speaker=spk))
        mark(f"finetune {spk}: loss {rep.losses[0]:.3f}->{rep.losses[-1]:.3f}; decode PER phi_p {per_p:.3f} -> phi_sd {per_sd:.3f}")

    dur, pitch, rd, rp = pl.stage_prosody(settings, store)
    mark(f"prosody: dur {rd.losses[0]:.4f}->{rd.losses[-1]:.4f}, pitch {rp.losses[0]:.4f}->{rp.losses[-1]:.4f}")

    spk_enc, rep = pl.stage_speaker(settings, store)
    mark(f"speaker: {rep.losses[0]:.3f} -> {rep.losses[-1]:.3f}")
    sv_cluster_report(store, spk_enc)

    gen, rep = pl.stage_generator(settings, store)
    mark(f"generator: {rep.losses[0]:.3f} -> {rep.losses[-1]:.3f}")

    for spk in speakers:
        sv, asab, state, rep = pl.stage_asa(settings, store, spk, checksum_every=100)
        l0, l1 = rep.losses[0], rep.losses[-1]
        mark(
            f"asa {spk}: adapt {l0['loss_adapt']:.3f}->{l1['loss_adapt']:.3f} "
            f"dis {l0['loss_dis']:.3f}->{l1['loss_dis']:.3f}"
        )

    from dsr.params import load_component

    for spk in speakers:
        bundles = pl.load_system_bundles(settings, spk)
        disc = load_component(settings.checkpoint(f"disc_{spk}")).net
        report = ev.evaluate_systems(
            store, spk, bundles, judge_bundle=bundles["SV-DSR"], disc_net=disc,
            prosody_encoder=phi_p,
        )
        mark(f"eval {spk}:")
        print(report.table(), flush=True)
        wins = 0
        pairs = {}
        for row in report.rows:
            pairs.setdefault(row.utt_id, {})[row.system] = row.cosine
        for utt, scores in pairs.items():
            if scores.get("ASA-DSR", -1) > scores.get("SV-DSR", -1):
                wins += 1
        print(f"ASA cosine wins: {wins}/{len(pairs)}", flush=True)
    mark("done")


def decode_per(store, params, entries):
    pers = []
    with torch.no_grad():
        for e in entries:
            ids = None
            try:
                ids, _ = params.net.decode_greedy(
                    store.feat120n(e.utt_id), store.inventory.eos_id
                )
            except Exception:
                pers.append(1.0)
                continue
            hyp = store.inventory.strip_silence(store.inventory.to_symbols(ids))
            ref = store.inventory.strip_silence(
                store.inventory.to_symbols(store.label_ids(e.utt_id))
            )
            pers.append(ev.phoneme_error_rate(hyp, ref))
    return float(np.mean(pers))


def sv_cluster_report(store, spk_enc):
    by_speaker = {}
    with torch.no_grad():
        for e in store.entries(role="healthy", split="eval"):
            emb = spk_enc.net.embed(store.mel40n(e.utt_id)).numpy()
            by_speaker.setdefault(e.speaker, []).append(emb)
    within, between = [], []
    speakers = sorted(by_speaker)
    for i, s in enumerate(speakers):
        embs = by_speaker[s]
        for a in range(len(embs)):
            for b in range(a + 1, len(embs)):
                within.append(float(embs[a] @ embs[b]))
        for s2 in speakers[i + 1 :]:
            for ea in embs:
                for eb in by_speaker[s2]:
                    between.append(float(ea @ eb))
    print(
        f"SV clustering: within-cos {np.mean(within):.3f}, "
        f"between-cos {np.mean(between):.3f}",
        flush=True,
    )


if __name__ == "__main__":
    main()
