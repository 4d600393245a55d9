"""``memlog`` command-line interface.

JSON results go to stdout, diagnostics to stderr. Exit codes:

    0 ok                     7 InvalidSpec            13 UnknownToken
    1 internal error         8 BindFailure            14 TooFewRows
    2 usage error            9 WatchDirMissing        15 NonFiniteFeature
    3 SingleClassInput      10 EmptyCorpus            16 UnlabeledLog
    4 LOG_PARSE             11 PE parse error         17 LengthMismatch
    5 ModelLoadFailure      12 VocabMismatch
    6 InsufficientClassCount

Heavy modules are imported inside the subcommand handlers so that the agent
process only loads what it needs.
"""
import argparse
import json
import logging
import sys
import tomllib
from pathlib import Path
from typing import List, Optional

from src.domain.errors import MemlogError

logger = logging.getLogger("memlog")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2

LOG_FORMAT = "%(levelname)-5.5s [%(name)s] %(message)s"


class UsageError(Exception):
    pass


def _non_negative_int(value: str) -> int:
    number = int(value)
    if number < 0:
        raise argparse.ArgumentTypeError(f"{value} is negative")
    return number


def _positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"{value} is not a positive integer")
    return number


def _unit_float(value: str) -> float:
    number = float(value)
    if not 0.0 <= number <= 1.0:
        raise argparse.ArgumentTypeError(f"{value} is outside [0, 1]")
    return number


def _open_unit_float(value: str) -> float:
    number = float(value)
    if not 0.0 < number < 1.0:
        raise argparse.ArgumentTypeError(f"{value} must lie strictly between 0 and 1")
    return number


def _positive_float(value: str) -> float:
    number = float(value)
    if not number > 0.0:
        raise argparse.ArgumentTypeError(f"{value} is not positive")
    return number


def _print_json(payload) -> None:
    if hasattr(payload, "model_dump_json"):
        print(payload.model_dump_json(indent=2))
    else:
        print(json.dumps(payload, indent=2, sort_keys=True))


def _validated(model_cls, **values):
    from pydantic import ValidationError

    try:
        return model_cls(**values)
    except ValidationError as exc:
        error = exc.errors()[0]
        raise UsageError(f"{'.'.join(str(p) for p in error['loc'])}: {error['msg']}") from None


# gen

def cmd_gen(args) -> int:
    from src.domain.schemas import GenSpec, Heterogeneity
    from src.domain.synthgen import generate_corpus
    from src.infra.repositories import CorpusRepository

    spec = _validated(
        GenSpec,
        n_malicious=args.malicious,
        n_benign=args.benign,
        overlap=args.overlap,
        seed=args.seed,
        heterogeneity=_validated(
            Heterogeneity,
            n_os_versions=args.os_versions,
            n_exe_names=args.exe_names,
            n_module_pool=args.module_pool,
            n_malware_families=args.families,
        ),
    )
    paths = CorpusRepository.write(args.out, generate_corpus(spec))
    _print_json({"directory": str(args.out), "logs": len(paths)})
    return EXIT_OK


# train / evaluate

def _split_spec(args):
    from src.domain.schemas import SplitSpec

    return _validated(
        SplitSpec,
        train_malicious_fraction=args.train_fraction,
        test_fraction=args.test_fraction,
        shuffle_seed=args.seed,
    )


def _read_corpus(corpus_dir: Path):
    from src.domain.errors import EmptyCorpus
    from src.infra.repositories import CorpusRepository

    entries = CorpusRepository.read(corpus_dir)
    if not entries:
        raise EmptyCorpus(f"no *.json logs in {corpus_dir}")
    return entries


def cmd_train(args) -> int:
    import numpy as np

    from src.domain.embedding import build_vocab, train_embeddings
    from src.domain.errors import SingleClassInput
    from src.domain.evaluation import holdout_split, score_report
    from src.domain.gbdt import TrainingHistory, predict_batch, train_classifier
    from src.domain.schemas import EmbeddingParams, GbdtParams
    from src.domain.tokenizer import tokenize
    from src.domain.vectorizer import label_value, vectorize_corpus
    from src.infra.repositories import EmbeddingRepository, ModelRepository, VectorDatasetRepository

    embedding_params = _validated(
        EmbeddingParams,
        window=args.window,
        negatives=args.negatives,
        epochs=args.epochs,
        initial_lr=args.lr,
        min_count=args.min_count,
        seed=args.seed,
    )
    gbdt_params = _validated(
        GbdtParams,
        trees=args.trees,
        max_depth=args.max_depth,
        shrinkage=args.shrinkage,
        lambda_=args.lambda_,
        min_leaf=args.min_leaf,
    )
    split = _split_spec(args)

    logs = [log for _, log in _read_corpus(args.corpus)]
    labels = np.array([label_value(log) for log in logs], dtype=np.int64)
    if len(set(labels.tolist())) < 2:
        raise SingleClassInput("training corpus contains a single class")
    train_idx, test_idx = holdout_split(labels, split)

    # held-out logs stay unseen by the embeddings as well as the classifier
    logger.info("stage 1/3: embeddings over %d training logs", len(train_idx))
    tokens = [tokenize(logs[index]) for index in train_idx]
    vocab = build_vocab(tokens, embedding_params.min_count)
    embeddings = train_embeddings(tokens, vocab, embedding_params)

    logger.info("stage 2/3: pooling log vectors")
    X, y = vectorize_corpus(logs, embeddings)
    if args.vectors_out:
        VectorDatasetRepository.save(args.vectors_out, X, y)

    logger.info("stage 3/3: boosting")
    history = TrainingHistory()
    model = train_classifier(X[train_idx], y[train_idx], gbdt_params, history)
    scores = predict_batch(model, X[test_idx])
    report = score_report(y[test_idx], scores, args.threshold)

    EmbeddingRepository.save(args.embeddings, embeddings)
    ModelRepository.save(args.model, model)
    logger.info("training loss %.4f -> %.4f over %d kept rounds",
                history.losses[0], history.losses[-1], len(history.losses) - 1)
    logger.debug("validation rows: %s", np.bincount(y[test_idx], minlength=2).tolist())
    _print_json(report)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    import csv

    import numpy as np

    from src.domain.evaluation import confusion_by_group, holdout_split, roc_points, score_report
    from src.domain.gbdt import predict_batch
    from src.domain.vectorizer import vectorize_corpus
    from src.infra.repositories import EmbeddingRepository, ModelRepository

    embeddings = EmbeddingRepository.load(args.embeddings)
    model = ModelRepository.load(args.model)
    logs = [log for _, log in _read_corpus(args.corpus)]
    X, y = vectorize_corpus(logs, embeddings)

    rows = np.arange(len(logs))
    if args.holdout:
        _, rows = holdout_split(y, _split_spec(args))
    scores = predict_batch(model, X[rows])
    report = score_report(y[rows], scores, args.threshold)
    if args.group_by:
        keys = [getattr(logs[i].metadata, args.group_by) for i in rows]
        predicted = (scores >= args.threshold).astype(int)
        report.groups = confusion_by_group(keys, y[rows], predicted)
    if args.roc_csv:
        with open(args.roc_csv, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["threshold", "fpr", "tpr"])
            writer.writerows(roc_points(y[rows], scores))
    _print_json(report)
    return EXIT_OK


# predict / serve

def _detector_settings(args, **extra):
    from src.infra.settings import DetectorSettings

    return _validated(
        DetectorSettings.load,
        embeddings_path=args.embeddings,
        model_path=args.model,
        threshold=args.threshold,
        **extra,
    )


def cmd_predict(args) -> int:
    from src.infra.detector import Detector

    settings = _detector_settings(args)
    detector = Detector.load(settings, audit=False)
    result = detector.detect(Path(args.log).read_bytes())
    _print_json(result)
    return EXIT_OK


def cmd_serve(args) -> int:
    from src.main import serve

    settings = _detector_settings(args, bind=args.bind, audit_log_path=args.audit_log)
    serve(settings)
    return EXIT_OK


# agent

def cmd_agent(args) -> int:
    from src.infra.agent import AgentSettings, run_agent

    try:
        settings = AgentSettings(
            watch_dir=args.watch,
            server_url=args.server,
            poll_interval_ms=args.poll_ms,
            max_attempts=args.max_attempts,
            backoff_base_ms=args.backoff_ms,
            results_path=args.results,
            exit_when_idle=args.exit_when_idle,
        ).with_environment()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    stats = run_agent(settings)
    _print_json({"processed": stats.processed, "failed": stats.failed})
    return EXIT_OK


# inspection

def cmd_similar(args) -> int:
    from src.domain.embedding import most_similar
    from src.infra.repositories import EmbeddingRepository

    model = EmbeddingRepository.load(args.embeddings)
    try:
        neighbours = most_similar(model, args.token, args.k)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _print_json([{"token": token, "similarity": similarity} for token, similarity in neighbours])
    return EXIT_OK


def cmd_pe(args) -> int:
    from src.domain.pefeatures import parse_pe_file

    _print_json(parse_pe_file(args.file))
    return EXIT_OK


def _global_options(nested: bool) -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)

    def default(value):
        return argparse.SUPPRESS if nested else value

    parent.add_argument("--seed", type=int, default=default(0), help="seed for every random choice")
    parent.add_argument("--config", type=Path, default=default(None), help="TOML config file")
    parent.add_argument("--verbose", "-v", action="store_true", default=default(False), help="debug logging")
    return parent


def _add_model_paths(parser: argparse.ArgumentParser):
    parser.add_argument("--embeddings", type=Path, default=Path("embeddings.bin"), help="embedding file")
    parser.add_argument("--model", type=Path, default=Path("model.bin"), help="classifier file")


def _add_threshold(parser: argparse.ArgumentParser):
    parser.add_argument("--threshold", type=_open_unit_float, default=0.75,
                        help="malicious when score >= threshold (default 0.75)")


def _add_split(parser: argparse.ArgumentParser):
    parser.add_argument("--train-fraction", type=_open_unit_float, default=0.70,
                        help="malicious share of the training split")
    parser.add_argument("--test-fraction", type=_open_unit_float, default=0.25,
                        help="share of the corpus held out, balanced across classes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memlog", description="In-memory malware early detection",
                                     parents=[_global_options(nested=False)])
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    nested = [_global_options(nested=True)]

    gen = commands.add_parser("gen", parents=nested, help="generate a synthetic labeled corpus")
    gen.add_argument("--out", type=Path, required=True, help="output directory")
    gen.add_argument("--malicious", type=_non_negative_int, default=500)
    gen.add_argument("--benign", type=_non_negative_int, default=500)
    gen.add_argument("--overlap", type=_unit_float, default=0.0,
                     help="share of malicious indicator slots drawn from the benign pool")
    gen.add_argument("--os-versions", type=_positive_int, default=10)
    gen.add_argument("--exe-names", type=_positive_int, default=33)
    gen.add_argument("--module-pool", type=_positive_int, default=60)
    gen.add_argument("--families", type=_positive_int, default=20)
    gen.set_defaults(handler=cmd_gen)

    train = commands.add_parser("train", parents=nested, help="train embeddings and classifier")
    train.add_argument("--corpus", type=Path, required=True)
    _add_model_paths(train)
    train.add_argument("--window", type=_positive_int, default=5)
    train.add_argument("--negatives", type=_positive_int, default=5)
    train.add_argument("--epochs", type=_positive_int, default=5)
    train.add_argument("--lr", type=_positive_float, default=0.025)
    train.add_argument("--min-count", type=_positive_int, default=2)
    train.add_argument("--trees", type=_non_negative_int, default=100)
    train.add_argument("--max-depth", type=_positive_int, default=6)
    train.add_argument("--shrinkage", type=_positive_float, default=0.1)
    train.add_argument("--lambda", dest="lambda_", type=float, default=1.0)
    train.add_argument("--min-leaf", type=_positive_int, default=5)
    train.add_argument("--vectors-out", type=Path, help="also write the pooled vectors as CSV")
    _add_split(train)
    _add_threshold(train)
    train.set_defaults(handler=cmd_train)

    evaluate = commands.add_parser("evaluate", parents=nested, help="score a labeled corpus")
    evaluate.add_argument("--corpus", type=Path, required=True)
    _add_model_paths(evaluate)
    _add_threshold(evaluate)
    _add_split(evaluate)
    evaluate.add_argument("--holdout", action="store_true", help="evaluate the held-out split only")
    evaluate.add_argument("--group-by", choices=("exe_name", "os_name"), help="per-group confusion matrices")
    evaluate.add_argument("--roc-csv", type=Path, help="write ROC points to this CSV")
    evaluate.set_defaults(handler=cmd_evaluate)

    predict = commands.add_parser("predict", parents=nested, help="score one log file")
    predict.add_argument("log", type=Path)
    _add_model_paths(predict)
    _add_threshold(predict)
    predict.set_defaults(handler=cmd_predict)

    serve = commands.add_parser("serve", parents=nested, help="run the detector service")
    serve.add_argument("--bind", default="127.0.0.1:8000", help="HOST:PORT")
    _add_model_paths(serve)
    _add_threshold(serve)
    serve.add_argument("--audit-log", type=Path, default=Path("audit.jsonl"))
    serve.set_defaults(handler=cmd_serve)

    agent = commands.add_parser("agent", parents=nested, help="ship log files to the detector")
    agent.add_argument("--watch", type=Path, required=True, help="directory to watch for *.json logs")
    agent.add_argument("--server", default="http://127.0.0.1:8000", help="detector base URL")
    agent.add_argument("--poll-ms", type=_non_negative_int, default=1000)
    agent.add_argument("--max-attempts", type=_positive_int, default=3)
    agent.add_argument("--backoff-ms", type=_non_negative_int, default=200)
    agent.add_argument("--results", type=Path, help="results file (default WATCH/detections.jsonl)")
    agent.add_argument("--exit-when-idle", action="store_true", help="stop once the directory is drained")
    agent.set_defaults(handler=cmd_agent)

    similar = commands.add_parser("similar", parents=nested, help="nearest tokens in embedding space")
    similar.add_argument("token")
    similar.add_argument("-k", type=_positive_int, default=10)
    similar.add_argument("--embeddings", type=Path, default=Path("embeddings.bin"))
    similar.set_defaults(handler=cmd_similar)

    pe = commands.add_parser("pe", parents=nested, help="print the PE features of an executable")
    pe.add_argument("file", type=Path)
    pe.set_defaults(handler=cmd_pe)

    return parser


def _load_config(path: Optional[Path]) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as handle:
            return tomllib.load(handle)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None


def _apply_config(parser: argparse.ArgumentParser, config: dict):
    """Config values become parser defaults, so explicit flags still win."""
    top_level = {key: value for key, value in config.items() if not isinstance(value, dict)}
    parser.set_defaults(**top_level)
    for action in parser._actions:
        if not isinstance(action, argparse._SubParsersAction):
            continue
        for name, subparser in action.choices.items():
            section = config.get(name)
            if isinstance(section, dict):
                subparser.set_defaults(**{key.replace("-", "_"): value for key, value in section.items()})


def configure_logging(verbose: bool):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=LOG_FORMAT,
        stream=sys.stderr,
    )
    if not verbose:
        for noisy in ("numba", "urllib3"):
            logging.getLogger(noisy).setLevel(logging.WARNING)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    try:
        _apply_config(parser, _load_config(known.config))
    except UsageError as exc:
        print(f"memlog: {exc}", file=sys.stderr)
        return EXIT_USAGE

    args = parser.parse_args(argv)
    configure_logging(args.verbose)
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"memlog {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MemlogError as exc:
        logger.error("%s: %s", exc.code, exc.message)
        return exc.exit_code
    except (FileNotFoundError, NotADirectoryError) as exc:
        print(f"memlog {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return 130
    except Exception:
        logger.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
