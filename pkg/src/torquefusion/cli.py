"""Command-line entry point: ``torquefusion <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import dynamics, encoding, evaluation, fusion, harness
from . import io as tio


def _cmd_dynamics(args):
    chain = tio.read_chain(args.chain)
    seq = tio.ingest_motion_file(args.motion, n_frames=args.frames)
    ts = dynamics.torques_from_sequence(chain, seq)
    tio.write_torques(args.output, ts)


def _cmd_encode(args):
    ts = tio.read_torques(args.torques)
    if args.normalize:
        ts = encoding.normalize_sequence(ts)
    if args.mask:
        ts = encoding.mask_joints(ts, args.mask)
    if args.params:
        params, _ = encoding.load_params(args.params)
    else:
        params = encoding.init_params(ts.n_joints * 3, args.dim, seed=args.seed)
        if args.save_params:
            encoding.save_params(args.save_params, params)
    if args.per_frame:
        vecs = encoding.fn_forward(params, encoding.frame_matrix(ts))
        ids = [f"{args.id}:{t}" for t in range(ts.n_frames)]
    else:
        vecs = encoding.encode_sequence(params, ts).vector[None, :]
        ids = [args.id]
    tio.write_embeddings(args.output, ids, vecs)


def _load_array(path):
    if path.endswith(".npy"):
        return np.load(path)
    return np.loadtxt(path, ndmin=1)


def _cmd_fuse(args):
    op = args.operator
    if op == "decision":
        fused, arg = fusion.fuse_decision(_load_array(args.a), _load_array(args.b),
                                          fusion.DecisionWeights(*args.weights))
        np.save(args.output, fused)
        print(json.dumps({"argmax": np.asarray(arg).tolist()}))
        return
    if op == "tokens":
        groups = []
        for paths in (args.vision, args.text, args.force):
            groups.append([t for p in (paths or []) for t in np.atleast_2d(_load_array(p))])
        np.save(args.output, fusion.fuse_tokens(*groups).tokens)
        return
    F = _load_array(args.a)
    if op == "bmm":
        G = _load_array(args.b)
        out = fusion.fuse_bmm(F, G)
    elif op == "gated":
        out = fusion.fuse_gated(F, _load_array(args.embedding), _load_array(args.param), args.bias, _load_array(args.b))
    elif op == "concat":
        out = fusion.fuse_concat(F, _load_array(args.b), _load_array(args.param))
    elif op == "add":
        out = fusion.fuse_addition(F, _load_array(args.b))
    else:
        out = fusion.fuse_elementwise(F, _load_array(args.b))
    np.save(args.output, out)


def _cmd_eval_retrieval(args):
    _, pl, P = tio.read_embeddings(args.probes)
    _, gl, G = tio.read_embeddings(args.gallery)
    if pl is None or gl is None:
        raise ValueError("retrieval evaluation needs labeled embedding files")
    mask = np.load(args.mask) if args.mask else None
    D = evaluation.distance_matrix(P, G, np.array(pl), np.array(gl), metric=args.metric, mask=mask)
    print(json.dumps(evaluation.retrieval_metrics(D, ks=tuple(args.k))))


def _read_ints(path):
    with open(path) as fh:
        return np.array([int(x) for x in fh.read().split()])


def _cmd_eval_classify(args):
    names = args.classes.split(",")
    compare = _read_ints(args.compare) if args.compare else None
    rep = evaluation.per_class_accuracy(_read_ints(args.predictions), _read_ints(args.labels), names, compare)
    print(json.dumps({"overall": rep.overall, "per_class": rep.per_class, "deltas": rep.deltas}))


def _cmd_eval_caption(args):
    with open(args.candidates) as fh:
        cands = fh.read().splitlines()
    with open(args.references) as fh:
        refs = fh.read().splitlines()
    if len(cands) != len(refs):
        raise ValueError("candidate and reference files must have the same number of lines")
    scores = [evaluation.rouge_l(c, r) for c, r in zip(cands, refs)]
    print(json.dumps({
        "precision": float(np.mean([s.precision for s in scores])),
        "recall": float(np.mean([s.recall for s in scores])),
        "f": float(np.mean([s.f for s in scores])),
        "n": len(scores),
    }))


def _cmd_ttest(args):
    m1, s1, n1, m2, s2, n2 = args.summary
    res = evaluation.t_test((m1, s1, int(n1)), (m2, s2, int(n2)), alpha=args.alpha, df_mode=args.df_mode)
    print(json.dumps({"t": res.t, "df": res.df, "p": res.p, "alpha": res.alpha,
                      "significant": res.significant, "df_mode": res.df_mode}))


def _cmd_synth(args):
    with open(args.spec) as fh:
        data = json.load(fh)
    chain = tio.read_chain(data.pop("chain")) if "chain" in data else dynamics.leg_chain()
    if "signatures" in data:
        data["signatures"] = np.asarray(data["signatures"], dtype=float)
    if "appearance_shape" in data:
        data["appearance_shape"] = tuple(data["appearance_shape"])
    spec = harness.SyntheticCohortSpec(chain=chain, **data)
    samples = harness.generate_synthetic_cohort(spec)
    harness.write_cohort(args.output, samples, chain, spec)


def _cmd_run(args):
    cfg = harness.ExperimentConfig.from_file(args.config)
    if args.output:
        cfg.output = args.output
    rep = harness.run_experiment(cfg)
    sys.stdout.write(rep.format_table())


def _cmd_ablate(args):
    cfg = harness.ExperimentConfig.from_file(args.config)
    if args.output:
        cfg.output = args.output
    res = harness.ablate_joints(cfg, args.joints)
    sys.stdout.write(res.format_table())


def build_parser():
    p = argparse.ArgumentParser(prog="torquefusion", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("dynamics", help="motion file -> torque file")
    s.add_argument("chain")
    s.add_argument("motion")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--frames", type=int, default=None, help="resample to this many frames first")
    s.set_defaults(func=_cmd_dynamics)

    s = sub.add_parser("encode", help="torque file + params -> embeddings")
    s.add_argument("torques")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--params", help="checkpoint (.npz); random init when omitted")
    s.add_argument("--save-params", help="write the random init here")
    s.add_argument("--dim", type=int, default=encoding.DEFAULT_EMBED_DIM)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--id", default="seq0")
    s.add_argument("--mask", type=int, nargs="*", default=[])
    s.add_argument("--no-normalize", dest="normalize", action="store_false")
    s.add_argument("--per-frame", action="store_true")
    s.set_defaults(func=_cmd_encode)

    s = sub.add_parser("fuse", help="apply one fusion operator to arrays (.npy or text)")
    s.add_argument("operator", choices=fusion.OPERATORS)
    s.add_argument("-a", help="appearance map / scores A")
    s.add_argument("-b", help="force map, transform G or scores B")
    s.add_argument("--embedding", help="force embedding (gated)")
    s.add_argument("--param", help="merge weight (concat) or gate weight (gated)")
    s.add_argument("--bias", type=float, default=0.0)
    s.add_argument("--weights", type=float, nargs=2, default=(0.5, 0.5))
    s.add_argument("--vision", nargs="*")
    s.add_argument("--text", nargs="*")
    s.add_argument("--force", nargs="*")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=_cmd_fuse)

    s = sub.add_parser("eval-retrieval", help="Rank-k, mAP and mINP from labeled embedding files")
    s.add_argument("probes")
    s.add_argument("gallery")
    s.add_argument("--metric", choices=("euclidean", "cosine"), default="euclidean")
    s.add_argument("--mask", help=".npy boolean probe x gallery ignore mask")
    s.add_argument("-k", type=int, nargs="*", default=[1, 5, 10])
    s.set_defaults(func=_cmd_eval_retrieval)

    s = sub.add_parser("eval-classify", help="top-1 accuracy per class")
    s.add_argument("predictions")
    s.add_argument("labels")
    s.add_argument("--classes", required=True, help="comma-separated class names")
    s.add_argument("--compare", help="second prediction file for deltas")
    s.set_defaults(func=_cmd_eval_classify)

    s = sub.add_parser("eval-caption", help="mean ROUGE-L over line-aligned caption files")
    s.add_argument("candidates")
    s.add_argument("references")
    s.set_defaults(func=_cmd_eval_caption)

    s = sub.add_parser("ttest", help="two-sample t-test from mean std n mean std n")
    s.add_argument("summary", type=float, nargs=6)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--df-mode", choices=("pooled", "welch"), default="pooled")
    s.set_defaults(func=_cmd_ttest)

    s = sub.add_parser("synth", help="cohort spec (JSON) -> cohort directory")
    s.add_argument("spec")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=_cmd_synth)

    s = sub.add_parser("run", help="experiment config (JSON) -> report")
    s.add_argument("config")
    s.add_argument("-o", "--output")
    s.set_defaults(func=_cmd_run)

    s = sub.add_parser("ablate", help="experiment config + joint ids -> delta table")
    s.add_argument("config")
    s.add_argument("joints", type=int, nargs="+")
    s.add_argument("-o", "--output")
    s.set_defaults(func=_cmd_ablate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        args.func(args)
    except harness.StageError as exc:
        print(f"torquefusion {args.command}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, KeyError) as exc:
        print(f"torquefusion {args.command}: [{args.command}] {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
