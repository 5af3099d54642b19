"""``msgen`` command-line tool.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from msgen import pipeline
from msgen.chem.io import read_molecules
from msgen.config import load_config
from msgen.errors import ChemError, ConfigError, DataError, MsgenError, NonFiniteError
from msgen.fingerprint import morgan_fingerprint
from msgen.mces import mces_distance

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("msgen")


def _common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", type=Path, required=config_required, help="key = value config file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--workers", type=int, default=1, help="worker processes for sampling and evaluation")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="msgen", description="Formula-constrained graph diffusion for spectra.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("build-dataset", "fingerprint a corpus, removing excluded molecules"),
        ("pretrain-decoder", "train the denoiser on fingerprint-molecule pairs"),
        ("pretrain-encoder", "train the spectrum encoder to predict fingerprints"),
        ("finetune", "train encoder and decoder jointly on labeled spectra"),
        ("sample", "generate molecules for each spectrum or fingerprint"),
    ]:
        _common(sub.add_parser(name, help=help_))
    ev = sub.add_parser("evaluate", help="score a samples file against the truth molecules")
    _common(ev)
    ev.add_argument("samples", type=Path)
    fp = sub.add_parser("fingerprint", help="Morgan fingerprints of a molecule file")
    fp.add_argument("molecules", type=Path)
    fp.add_argument("--width", type=int, default=2048)
    fp.add_argument("--radius", type=int, default=2)
    fp.add_argument("--out", type=Path, help="output file (default stdout)")
    mc = sub.add_parser("mces", help="MCES distances between all pairs of two molecule files")
    mc.add_argument("file1", type=Path)
    mc.add_argument("file2", type=Path)
    mc.add_argument("--threshold", type=float, default=None)
    mc.add_argument("--out", type=Path, help="output file (default stdout)")
    return ap


def _emit(lines, out: Path | None) -> None:
    if out is None:
        for line in lines:
            sys.stdout.write(line)
        return
    with open(out, "w", encoding="utf-8") as fh:
        fh.writelines(lines)


def _fingerprint(args) -> None:
    if args.width <= 0 or args.width & (args.width - 1) or args.radius < 0:
        raise ConfigError("--width must be a power of two and --radius non-negative")
    mols = read_molecules(args.molecules)
    _emit((f"{mid}\t{morgan_fingerprint(g, args.width, args.radius).to_hex()}\n" for mid, g in mols), args.out)


def _mces(args) -> None:
    a, b = read_molecules(args.file1), read_molecules(args.file2)

    def rows():
        for i1, g1 in a:
            for i2, g2 in b:
                r = mces_distance(g1, g2, args.threshold)
                yield f"{i1}\t{i2}\t{r.distance:g}\t{int(r.exact)}\n"

    _emit(rows(), args.out)


STAGES = {
    "build-dataset": lambda cfg, a: pipeline.run_build_dataset(cfg, a.out),
    "pretrain-decoder": lambda cfg, a: pipeline.run_pretrain_decoder(cfg, a.out),
    "pretrain-encoder": lambda cfg, a: pipeline.run_pretrain_encoder(cfg, a.out),
    "finetune": lambda cfg, a: pipeline.run_finetune(cfg, a.out),
    "sample": lambda cfg, a: pipeline.run_sample(cfg, a.out, a.workers),
    "evaluate": lambda cfg, a: pipeline.run_evaluate(cfg, a.out, a.samples, a.workers),
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "fingerprint":
            _fingerprint(args)
        elif args.command == "mces":
            _mces(args)
        else:
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg = cfg.with_seed(args.seed)
            if args.workers < 1:
                raise ConfigError("--workers must be at least 1")
            STAGES[args.command](cfg, args)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        log.error("numerical divergence: %s", exc)
        return EXIT_DIVERGED
    except (DataError, ChemError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except MsgenError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
