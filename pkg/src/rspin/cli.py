"""``rspin`` command-line tool.

Exit codes: 0 success, 1 runtime error, 2 usage / configuration error.
Machine-readable results go to stdout or files; diagnostics go to stderr.
"""

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import evaluation as ev
from .config import load_config
from .formats import read_fmat
from .perturb import (
    NoiseKind,
    SpeakerPerturbParams,
    apply_reverb,
    gen_colored_noise,
    measure_snr,
    mix_noise_at_snr,
    perturb_speaker,
    read_wav,
    write_wav,
)
from .pieces import (
    MergeRuleTable,
    actual_vocab_used,
    deduplicate,
    encode,
    expand_to_frames,
    kmeans_units,
    learn_bpe,
    read_unit_corpus,
    remap_labels,
    write_unit_corpus,
)
from .synth import generate, write_corpus
from .trainer import TrainState, assign_codes, forward, frame_batches, load_state, train

logger = logging.getLogger("rspin")


class UsageError(Exception):
    """Bad flags or configuration; maps to exit code 2."""


def _float_pair(text):
    try:
        lo, hi = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LOW,HIGH, got {text!r}") from None
    return lo, hi


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args):
    try:
        cfg = load_config(args.config).with_overrides(n_utts=args.n_utts, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    utts = generate(cfg.synth_spec(), cfg.n_utts)
    manifest = write_corpus(utts, args.out_dir)
    teacher = kmeans_units([u.features for u in utts], cfg.teacher_clusters, cfg.seed)
    write_unit_corpus(os.path.join(args.out_dir, "teacher_units.txt"), teacher)
    with open(os.path.join(args.out_dir, "config.ini"), "w", encoding="utf-8") as f:
        f.write(cfg.to_ini())
    logger.info("wrote %d utterances (%d frames) to %s", len(utts),
                sum(u.n_frames for u in utts), manifest)
    return 0


# ---------------------------------------------------------------------------
# perturb


def cmd_perturb(args):
    if args.snr is not None and args.noise_kind is None:
        raise UsageError("--snr sets the level of added noise and needs --noise-kind")
    w = read_wav(args.input)
    rng = np.random.default_rng(args.speaker_seed)
    params = SpeakerPerturbParams(tuple(args.pitch_range), tuple(args.warp_range), args.speaker_seed)
    out = perturb_speaker(w, params, rng)
    if args.rir:
        out = apply_reverb(out, read_wav(args.rir))
    if args.noise_kind:
        snr = args.snr if args.snr is not None else float(rng.uniform(-10.0, 10.0))
        noise = gen_colored_noise(args.noise_kind, max(len(out), 256), out.sample_rate, rng)
        clean = out
        out = mix_noise_at_snr(clean, noise, snr, rng)
        logger.info("target SNR %.3f dB, measured %.3f dB", snr, measure_snr(clean, out))
    write_wav(args.output, out, args.format)
    return 0


# ---------------------------------------------------------------------------
# acoustic pieces


def cmd_ap_learn(args):
    corpus = [deduplicate(s) for s in read_unit_corpus(args.units)]
    rules = learn_bpe(corpus, args.nominal_size, args.base_vocab)
    rules.save(args.out)
    logger.info("learned %d merges (nominal size %d, base vocabulary %d)",
                len(rules), rules.nominal_size, rules.base_vocab)
    return 0


def cmd_ap_encode(args):
    rules = MergeRuleTable.load(args.rules)
    out = [expand_to_frames(*encode(deduplicate(s), rules)) for s in read_unit_corpus(args.units)]
    write_unit_corpus(args.out, out)
    return 0


def cmd_ap_stats(args):
    rules = MergeRuleTable.load(args.rules)
    if args.labels:
        encoded = read_unit_corpus(args.labels)
    else:
        encoded = [encode(deduplicate(s), rules)[0] for s in read_unit_corpus(args.units)]
    used = actual_vocab_used(encoded)
    print(f"base_vocab\t{rules.base_vocab}")
    print(f"nominal\t{rules.nominal_size}")
    print(f"merges\t{len(rules)}")
    print(f"actual\t{used}")
    if used > rules.nominal_size:
        logger.error("actual vocabulary %d exceeds nominal size %d", used, rules.nominal_size)
        return 1
    return 0


# ---------------------------------------------------------------------------
# train


def read_manifest(corpus_dir):
    path = os.path.join(corpus_dir, "manifest.csv")
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise ValueError(f"{path}: empty manifest")
    return rows


def load_views(corpus_dir):
    """Clean and perturbed feature matrices for every manifest row, in order."""
    clean, pert = [], []
    for row in read_manifest(corpus_dir):
        path = os.path.join(corpus_dir, row["path_feats"])
        clean.append(read_fmat(path))
        pert.append(read_fmat(path[: -len(".fmat")] + ".pert.fmat"))
        if clean[-1].shape[0] != int(row["frames"]) or pert[-1].shape != clean[-1].shape:
            raise ValueError(f"{row['utt_id']}: frame count disagrees with the manifest")
    return clean, pert


def cmd_train(args):
    try:
        cfg = load_config(args.config).with_overrides(
            lam=args.lam, codebook_size=args.codebook_size, freeze_below=args.freeze_below,
            total_updates=args.updates, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    clean, pert = load_views(args.corpus_dir)
    labels = read_unit_corpus(args.labels)
    if len(labels) != len(clean) or any(l.size != c.shape[0] for l, c in zip(labels, clean)):
        raise ValueError("label corpus does not line up with the manifest (utterances or frames)")
    dense, mapping = remap_labels(labels)
    X, Xp, y = np.concatenate(clean), np.concatenate(pert), np.concatenate(dense)
    enc = cfg.encoder_config(X.shape[1])
    tcfg = cfg.train_config(aux_vocab=len(mapping))
    if tcfg.frames_per_batch > X.shape[0]:
        raise UsageError(f"frames_per_batch {tcfg.frames_per_batch} exceeds corpus size {X.shape[0]}")
    label = f"R-Spin_{{{tcfg.codebook_size}, {len(mapping)}}}"
    logger.info("training %s for %d updates on %d frames", label, tcfg.total_updates, X.shape[0])
    os.makedirs(args.out_dir, exist_ok=True)
    state = TrainState.initial(enc, tcfg)
    train(frame_batches(X, Xp, y, tcfg.frames_per_batch, seed=[tcfg.seed, 1]), enc, tcfg, state=state,
          log_path=os.path.join(args.out_dir, "metrics.csv"),
          checkpoint_path=os.path.join(args.out_dir, "checkpoint.rspn"))
    with open(os.path.join(args.out_dir, "run.ini"), "w", encoding="utf-8") as f:
        f.write(f"# {label}\n" + cfg.to_ini())
    with open(os.path.join(args.out_dir, "label_map.tsv"), "w", encoding="utf-8") as f:
        f.write("piece\tlabel\n")
        f.writelines(f"{k}\t{v}\n" for k, v in mapping.items())
    return 0


def cmd_predict(args):
    state = load_state(args.checkpoint)
    clean, pert = load_views(args.corpus_dir)
    feats = pert if args.view == "perturbed" else clean
    out = [assign_codes(X, state) for X in feats]
    write_unit_corpus(args.out, out)
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval_cka(args):
    w = csv.writer(sys.stdout, lineterminator="\n")
    if args.a and args.b:
        X, Y = read_fmat(args.a), read_fmat(args.b)
        if X.shape[0] != Y.shape[0]:
            raise ValueError(f"row count mismatch: {X.shape[0]} vs {Y.shape[0]}")
        w.writerow(["pair", "cka"])
        w.writerow(["a_vs_b", f"{ev.linear_cka(X, Y):.10f}"])
        return 0
    if not (args.checkpoint and args.corpus_dir):
        raise UsageError("give either --a and --b, or --checkpoint and --corpus-dir")
    state = load_state(args.checkpoint)
    clean, pert = load_views(args.corpus_dir)
    _, acts, _ = forward(np.concatenate(clean), state.params, state.enc)
    _, acts_p, _ = forward(np.concatenate(pert), state.params, state.enc)
    w.writerow(["layer", "cka"])
    for i, (a, b) in enumerate(zip(acts, acts_p)):
        w.writerow([i, f"{ev.linear_cka(a, b):.10f}"])
    return 0


def read_boundary_file(path):
    """Lines of ``<length> <b1> <b2> ...``, one utterance each."""
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            try:
                vals = [int(t) for t in line.split()]
                out.append(ev.BoundarySet(tuple(vals[1:]), vals[0]))
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: bad boundary line ({exc})") from None
    return out


def cmd_eval_segment(args):
    pred_units = read_unit_corpus(args.pred)
    pred = [ev.boundaries_from_units(s) for s in pred_units]
    if args.ref:
        ref = read_boundary_file(args.ref)
    elif args.ref_units:
        ref = [ev.boundaries_from_units(s) for s in read_unit_corpus(args.ref_units)]
    else:
        raise UsageError("give --ref (boundary file) or --ref-units")
    if len(pred) != len(ref):
        raise ValueError(f"{len(pred)} predicted utterances but {len(ref)} references")
    uniform = [ev.uniform_segmentation(len(r), r.sequence_length) for r in ref]
    rows = [("pred", ev.pooled_segmentation_metrics(zip(pred, ref), args.tol)),
            ("uniform", ev.pooled_segmentation_metrics(zip(uniform, ref), args.tol))]
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["method", "precision", "recall", "f1", "os", "r_value"])
    for name, m in rows:
        w.writerow([name] + [f"{v:.6f}" for v in m.as_dict().values()])
    return 0


def cmd_eval_purity(args):
    a = np.concatenate(read_unit_corpus(args.assign))
    t = np.concatenate(read_unit_corpus(args.truth))
    print(f"purity\t{ev.cluster_purity(a, t):.6f}")
    print(f"majority_baseline\t{ev.majority_baseline(t):.6f}")
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="rspin", description=__doc__.splitlines()[0], formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="log debug output to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic two-view corpus", formatter_class=fmt)
    s.add_argument("--config", default=None, help="INI run configuration")
    s.add_argument("--out-dir", required=True, default=None, help="output directory")
    s.add_argument("--n-utts", type=int, default=None, help="override n_utts")
    s.add_argument("--seed", type=int, default=None, help="override seed")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("perturb", help="re-voice a WAV file and add noise / reverb", formatter_class=fmt)
    s.add_argument("input", help="input WAV (mono PCM16 or float32)")
    s.add_argument("output", help="output WAV")
    s.add_argument("--snr", type=float, default=None,
                   help="noise level in dB (random in [-10, 10] when --noise-kind is given alone)")
    s.add_argument("--noise-kind", choices=[k.name.lower() for k in NoiseKind], default=None,
                   help="colored noise to add")
    s.add_argument("--rir", default=None, help="room impulse response WAV")
    s.add_argument("--speaker-seed", type=int, default=0, help="seed for the perturbation")
    s.add_argument("--pitch-range", type=_float_pair, default=(-4.0, 4.0),
                   help="pitch shift range in semitones, LOW,HIGH")
    s.add_argument("--warp-range", type=_float_pair, default=(0.85, 1.18),
                   help="formant warp factor range, LOW,HIGH")
    s.add_argument("--format", choices=["float32", "pcm16"], default="float32", help="output sample format")
    s.set_defaults(func=cmd_perturb)

    ap = sub.add_parser("ap", help="acoustic pieces", formatter_class=fmt)
    apsub = ap.add_subparsers(dest="ap_command", required=True)
    s = apsub.add_parser("learn", help="learn merge rules from a unit corpus", formatter_class=fmt)
    s.add_argument("--units", required=True, default=None, help="unit corpus (one utterance per line)")
    s.add_argument("--nominal-size", type=int, required=True, default=None,
                   help="base vocabulary plus maximum number of merges")
    s.add_argument("--base-vocab", type=int, default=None, help="base vocabulary (default: max id + 1)")
    s.add_argument("--out", required=True, default=None, help="merge table TSV")
    s.set_defaults(func=cmd_ap_learn)
    s = apsub.add_parser("encode", help="write frame-level acoustic-piece labels", formatter_class=fmt)
    s.add_argument("--units", required=True, default=None, help="unit corpus")
    s.add_argument("--rules", required=True, default=None, help="merge table TSV")
    s.add_argument("--out", required=True, default=None, help="frame-level label corpus")
    s.set_defaults(func=cmd_ap_encode)
    s = apsub.add_parser("stats", help="nominal vs actual vocabulary", formatter_class=fmt)
    s.add_argument("--rules", required=True, default=None, help="merge table TSV")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--units", default=None, help="unit corpus to encode")
    g.add_argument("--labels", default=None, help="already encoded label corpus")
    s.set_defaults(func=cmd_ap_stats)

    s = sub.add_parser("train", help="two-view training with the pseudo-label loss", formatter_class=fmt)
    s.add_argument("--config", default=None, help="INI run configuration")
    s.add_argument("--corpus-dir", required=True, default=None, help="directory with manifest.csv")
    s.add_argument("--labels", required=True, default=None, help="frame-level pseudo-label corpus")
    s.add_argument("--out-dir", required=True, default=None, help="checkpoint and metrics directory")
    s.add_argument("--lambda", dest="lam", type=float, default=None, help="pseudo-label loss weight")
    s.add_argument("--codebook-size", type=int, default=None, help="number of code vectors")
    s.add_argument("--freeze-below", type=int, default=None, help="freeze encoder layers below this index")
    s.add_argument("--updates", type=int, default=None, help="number of updates")
    s.add_argument("--seed", type=int, default=None, help="override seed")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="write codebook assignments per utterance", formatter_class=fmt)
    s.add_argument("--checkpoint", required=True, default=None, help="RSPN checkpoint")
    s.add_argument("--corpus-dir", required=True, default=None, help="directory with manifest.csv")
    s.add_argument("--view", choices=["clean", "perturbed"], default="clean", help="which view to encode")
    s.add_argument("--out", required=True, default=None, help="unit corpus output")
    s.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="analysis tools", formatter_class=fmt)
    esub = e.add_subparsers(dest="eval_command", required=True)
    s = esub.add_parser("cka", help="linear CKA between representations", formatter_class=fmt)
    s.add_argument("--a", default=None, help="first FMAT file")
    s.add_argument("--b", default=None, help="second FMAT file")
    s.add_argument("--checkpoint", default=None, help="checkpoint for per-layer clean/perturbed CKA")
    s.add_argument("--corpus-dir", default=None, help="corpus for per-layer CKA")
    s.set_defaults(func=cmd_eval_cka)
    s = esub.add_parser("segment", help="boundary precision / recall / R-value", formatter_class=fmt)
    s.add_argument("--pred", required=True, default=None, help="predicted unit corpus")
    s.add_argument("--ref", default=None, help="reference boundaries: '<length> <b1> <b2> ...' per line")
    s.add_argument("--ref-units", default=None, help="reference unit corpus (boundaries where units change)")
    s.add_argument("--tol", type=int, default=1, help="matching tolerance in frames")
    s.set_defaults(func=cmd_eval_segment)
    s = esub.add_parser("purity", help="cluster purity against reference units", formatter_class=fmt)
    s.add_argument("--assign", required=True, default=None, help="cluster assignment corpus")
    s.add_argument("--truth", required=True, default=None, help="reference unit corpus")
    s.set_defaults(func=cmd_eval_purity)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"rspin: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"rspin: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
