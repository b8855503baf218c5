"""
Command-line interface: ``gfnsmc <command> [options]``.
"""
import argparse
import csv
import json
import logging
import os
import sys

from gfnsmc import log
from gfnsmc.analysis import METRICS, evaluate
from gfnsmc.buffer import ReplayBuffer
from gfnsmc.config import ALGORITHMS, load_config
from gfnsmc.enumeration import enumerate_table
from gfnsmc.exceptions import GfnSmcError, InputError
from gfnsmc.io import load_checkpoint, save_samples, save_strings
from gfnsmc.process import Provenance
from gfnsmc.smc import RESAMPLING_SCHEMES, smc_sampling
from gfnsmc.targets import SequenceReward, strings_from_tokens
from gfnsmc.trainer import Trainer
from gfnsmc.utils import RandomStreams, make_run_dir

logger = logging.getLogger(__name__)


def _write_terminals(file_path, trainer, terminal, log_weights=None, log_z_hat=None):
    process = trainer.process
    if process.is_discrete:
        strings = strings_from_tokens(process.to_numpy(terminal), process.vocab)
        save_strings(file_path, strings, log_weights, log_z_hat)
    else:
        save_samples(file_path, process.to_numpy(terminal), None, log_weights, log_z_hat)


def _load_trainer(checkpoint_path):
    return Trainer.from_checkpoint(load_checkpoint(checkpoint_path))


def train(args):
    if args.resume is not None:
        trainer = _load_trainer(args.resume)
        logger.info(f"Resuming from {args.resume} at epoch {trainer.epoch}")
    else:
        config = load_config(args.config)
        if args.algo is not None:
            config.algo = args.algo
        config.seed = args.seed
        trainer = Trainer(config)
    trainer.train(n_epoch=args.epochs, out_dir=args.out)
    return 0


def sample(args):
    trainer = _load_trainer(args.checkpoint)
    generator = RandomStreams(args.seed).torch("sample")
    batch = trainer.process.rollout(trainer.policy, args.n, generator, Provenance.ON_POLICY)
    _write_terminals(args.out, trainer, batch.terminal)
    logger.info(f"Wrote {args.n} samples to {args.out}")
    return 0


def smc(args):
    trainer = _load_trainer(args.checkpoint)
    config = trainer.config
    system = smc_sampling(
        trainer.process,
        trainer.policy,
        trainer.flow,
        args.n,
        config.chunk if args.chunk is None else args.chunk,
        config.kappa if args.kappa is None else args.kappa,
        config.gamma if args.gamma is None else args.gamma,
        RandomStreams(args.seed).torch("smc"),
        args.resampling or config.resampling,
    )
    _write_terminals(
        args.out, trainer, system.particles, system.log_weights.numpy(), system.log_z_hat
    )
    print(f"log_z_hat = {system.log_z_hat!r}")
    return 0


def evaluate_checkpoint(args):
    trainer = _load_trainer(args.checkpoint)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    report = evaluate(trainer.process, trainer.policy, metrics, args.n, args.seed)
    values = report.to_dict()
    print(json.dumps(values, indent=2, sort_keys=True))
    if args.csv is not None:
        exists = os.path.isfile(args.csv)
        with open(args.csv, "a", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(values))
            if not exists:
                writer.writeheader()
            writer.writerow({k: "" if v is None else v for k, v in values.items()})
    return 0


def dump_buffer(args):
    checkpoint = load_checkpoint(args.checkpoint)
    if checkpoint.buffer is None:
        raise InputError(f"{args.checkpoint} holds no replay buffer.")
    buffer = ReplayBuffer.from_dict(checkpoint.buffer)
    target = checkpoint.config["target"]
    vocab = target.get("vocab", "AB") if target["name"] == "sequence" else None
    buffer.dump_csv(args.out, vocab)
    logger.info(f"Wrote {len(buffer)} buffer entries to {args.out}")
    return 0


def enumerate_sequences(args):
    table = enumerate_table(SequenceReward(args.vocab, args.len, args.reward))
    print(f"Z = {table.z:.12g}")
    print(f"log Z = {table.log_z!r}")
    print(f"terminal states = {len(table.terminals)}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gfnsmc",
        description="Amortised samplers trained with SMC and importance-weighted replay.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", action="store_true", help="Log DEBUG records.")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser(
        "train", parents=[common], help="Train a sampler."
    )
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", help="JSON or YAML configuration file.")
    source.add_argument("--resume", help="Checkpoint to continue from.")
    p.add_argument(
        "--algo", choices=ALGORITHMS, help="Overrides the algorithm of the configuration."
    )
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="Run directory.")
    p.add_argument("--epochs", type=int, help="Total number of epochs.")
    p.set_defaults(func=train)

    p = commands.add_parser(
        "sample", parents=[common], help="Draw samples from a trained policy."
    )
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=sample)

    p = commands.add_parser(
        "smc", parents=[common], help="Run SMC with a trained policy and flows."
    )
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, required=True, help="Number of particles.")
    p.add_argument("--chunk", type=int)
    p.add_argument("--kappa", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--resampling", choices=RESAMPLING_SCHEMES)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=smc)

    p = commands.add_parser(
        "eval", parents=[common], help="Evaluate a trained policy."
    )
    p.add_argument("--checkpoint", required=True)
    p.add_argument(
        "--metrics", default="elbo", help=f"Comma-separated subset of {','.join(METRICS)}."
    )
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--csv", help="Append the report as a CSV row.")
    p.set_defaults(func=evaluate_checkpoint)

    p = commands.add_parser(
        "dump-buffer", parents=[common], help="Export the replay buffer of a checkpoint."
    )
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=dump_buffer)

    p = commands.add_parser(
        "enumerate", parents=[common], help="Exact normaliser of a sequence reward."
    )
    p.add_argument("--vocab", default="AB")
    p.add_argument("--len", type=int, required=True)
    p.add_argument("--reward", default="count_a_pow2")
    p.set_defaults(func=enumerate_sequences)
    return parser


def main(argv=None):
    """
    Run one command.

    Returns
    -------
    int
        0 on success, 1 on any error; usage errors exit with status 2.
    """
    args = build_parser().parse_args(argv)
    log_file = None
    if args.command == "train":
        make_run_dir(args.out)
        log_file = os.path.join(args.out, "gfnsmc.log")
    log.config_root_logger(args.verbose, log_file)
    try:
        return args.func(args)
    except GfnSmcError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
