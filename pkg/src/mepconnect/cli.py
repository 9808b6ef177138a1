"""Command line entry point: ``mepconnect {train,connect,profile,decode}``."""
import argparse
import csv
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from .checkpoint import save_model
from .classifier import MlpSpec, accuracy, init_model, train_adam
from .decoder import (
    DecoderSpec,
    DecoderTrainConfig,
    decode_path,
    load_decoder,
    save_decoder,
    train_decoder,
)
from .errors import ConfigError, MepConnectError
from .experiment import (
    ExperimentConfig,
    emit_path_profile_csv,
    load_config,
    resolve_model,
    run_experiment,
    sample_pairs,
    write_path_file,
)
from .pathfind import connect_pair

log = logging.getLogger("mepconnect")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "pairs", None) is not None:
        cfg = replace(cfg, pair_count=args.pairs)
    if getattr(args, "layer", None) is not None:
        cfg = replace(cfg, layers=(args.layer,))
    return cfg


def cmd_train(args):
    cfg = _config(args)
    if args.seed is not None:
        cfg = replace(cfg, model_seed=args.seed, train=replace(cfg.train, seed=args.seed))
    os.makedirs(args.out, exist_ok=True)
    data = cfg.dataset.build()
    model, trace = train_adam(init_model(MlpSpec(cfg.layer_dims, cfg.model_seed)), data, cfg.train)
    save_model(model, os.path.join(args.out, "model.cpth"))
    with open(os.path.join(args.out, "train_trace.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss"])
        for e, loss in enumerate(trace):
            w.writerow([e, repr(loss)])
    dc = cfg.decoder
    for l in dc.layers:
        spec = DecoderSpec(model.latent_dim(l), model.input_dim, dc.hidden_dims, dc.seed)
        base = DecoderTrainConfig.last_layer() if l == model.num_hidden else DecoderTrainConfig.first_hidden()
        dcfg = replace(base, epochs=dc.epochs, learning_rate=dc.learning_rate, seed=dc.seed)
        dec, _ = train_decoder(model, l, data, spec, dcfg)
        save_decoder(dec, os.path.join(args.out, f"decoder_layer{l}.cptd"))
    print(f"trained {list(cfg.layer_dims)}: accuracy {accuracy(model, data):.4f}, "
          f"final loss {trace[-1]:.6g} -> {os.path.join(args.out, 'model.cpth')}")


def cmd_connect(args):
    cfg = _config(args)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    run_experiment(cfg, args.out)
    with open(os.path.join(args.out, "connectivity.txt")) as fh:
        sys.stdout.write(fh.read())


def cmd_profile(args):
    cfg = _config(args)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    data = cfg.dataset.build()
    model, _ = resolve_model(cfg, data)
    layer = args.layer if args.layer is not None else 0
    if args.x1 is not None and args.x2 is not None:
        x1, x2 = np.array(args.x1), np.array(args.x2)
        target = cfg.target_class
    elif cfg.profile_pair is not None:
        x1, x2 = (np.array(v) for v in cfg.profile_pair)
        target = cfg.target_class
    else:
        pair = sample_pairs(model, data, cfg, count=1)[0]
        x1, x2, target = pair.x1, pair.x2, pair.target
    verdict = connect_pair(model, layer, x1, x2, cfg.neb, target=target)
    os.makedirs(args.out, exist_ok=True)
    emit_path_profile_csv(verdict, os.path.join(args.out, f"profile_layer{layer}.csv"))
    write_path_file(verdict.final_path, os.path.join(args.out, f"path_layer{layer}.csv"))
    print(f"layer {layer}: {verdict.verdict.value} after {verdict.iterations_used} iterations "
          f"(max energy {verdict.max_energy_initial:.6g} -> {verdict.max_energy_final:.6g})")


def cmd_decode(args):
    from .experiment import read_path_file

    decoder = load_decoder(args.decoder)
    path = read_path_file(args.path)
    if path.layer_index != decoder.layer_index:
        raise ConfigError(
            f"path is in layer {path.layer_index}, decoder reads layer {decoder.layer_index}"
        )
    t, X = decode_path(decoder, path, args.samples)
    os.makedirs(args.out, exist_ok=True)
    out = os.path.join(args.out, "decoded.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x{j}" for j in range(X.shape[1])])
        for ti, row in zip(t, X):
            w.writerow([f"{ti:.12g}"] + [f"{v:.12g}" for v in row])
    print(f"decoded {len(t)} samples -> {out}")


def build_parser():
    p = argparse.ArgumentParser(prog="mepconnect", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, layer=True, pairs=False):
        sp.add_argument("--config", help="INI experiment config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=True, help="output directory")
        if layer:
            sp.add_argument("--layer", type=int, help="layer index (0 = input space)")
        if pairs:
            sp.add_argument("--pairs", type=int, help="number of pairs")

    sp = sub.add_parser("train", help="train a classifier (and decoders) from a config")
    common(sp, layer=False)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("connect", help="run the pair-connectivity experiment")
    common(sp, pairs=True)
    sp.set_defaults(func=cmd_connect)

    sp = sub.add_parser("profile", help="class-probability profile for one pair")
    common(sp)
    sp.add_argument("--x1", type=float, nargs="+")
    sp.add_argument("--x2", type=float, nargs="+")
    sp.set_defaults(func=cmd_profile)

    sp = sub.add_parser("decode", help="decode a latent path file with a decoder checkpoint")
    sp.add_argument("decoder", help="decoder checkpoint (.cptd)")
    sp.add_argument("path", help="path file written by connect/profile")
    sp.add_argument("--out", required=True)
    sp.add_argument("--samples", type=int, default=10, help="samples per segment")
    sp.set_defaults(func=cmd_decode)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (MepConnectError, OSError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"mepconnect: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
