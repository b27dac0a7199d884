"""Command-line pipeline: align, project, cluster, train, supervised-train, tag, evaluate.

Every run writes a JSON manifest next to its primary output recording the
command, configuration, input digests, seed and counters.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from collections import Counter

from . import __version__, container
from . import corpus as C
from . import evaluation as E
from . import features as F
from . import hmm as H
from . import projection as P
from . import wsabie as WS

logger = logging.getLogger("morphproj")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
THREADS_ENV = "MORPHPROJ_THREADS"
CONSTRAINT_FLAGS = {"type": "type", "type+token": "type_and_token", "unambiguous": "unambiguous_type"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _read_text(path) -> str:
    with open(path, encoding="utf-8") as f:
        return f.read()


def _write_text(path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Run:
    """Collects inputs and counters for the manifest."""

    def __init__(self, args):
        self.args = args
        self.inputs = {}
        self.counters = Counter()

    def read(self, path) -> str:
        self.inputs[str(path)] = _digest(path)
        return _read_text(path)

    def manifest(self) -> dict:
        config = {k: v for k, v in sorted(vars(self.args).items())
                  if k not in ("func", "manifest", "verbose")}
        return {
            "command": self.args.command,
            "config": config,
            "inputs": dict(sorted(self.inputs.items())),
            "seed": getattr(self.args, "seed", None),
            "tool_version": __version__,
            "counters": dict(sorted(self.counters.items())),
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        }

    def write_manifest(self, primary_output):
        path = self.args.manifest or (f"{primary_output}.manifest.json" if primary_output else None)
        if path:
            _write_text(path, json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")


# -- subcommands -------------------------------------------------------------

def cmd_align(args, run: Run):
    bitext = P.parse_bitext(run.read(args.bitext))
    run.counters["pairs"] = len(bitext)
    posteriors = P.model1_align(bitext, args.iterations)
    fwd_lines, rev_lines = [], []
    for fwd, rev in posteriors:
        fwd_lines.append(P.format_alignment_line(P.directional_links(fwd, "fwd")))
        rev_lines.append(P.format_alignment_line(P.directional_links(rev, "rev")))
    _write_text(args.out_fwd, "\n".join(fwd_lines) + "\n")
    _write_text(args.out_rev, "\n".join(rev_lines) + "\n")
    return args.out_fwd


def _load_pairs(args, run: Run) -> list:
    bitext = P.parse_bitext(run.read(args.bitext))
    source = C.parse_corpus(run.read(args.source_tagged), max_length=0)
    fwd = P.parse_alignments(run.read(args.fwd))
    rev = P.parse_alignments(run.read(args.rev))
    if not len(bitext) == len(source) == len(fwd) == len(rev):
        raise ValueError(f"line counts differ: bitext {len(bitext)}, source-tagged {len(source)}, "
                         f"fwd {len(fwd)}, rev {len(rev)}")
    pairs = []
    for n, ((src_words, tgt_words), src_sent, f_links, r_links) in enumerate(zip(bitext, source, fwd, rev), 1):
        if src_sent.words != src_words:
            raise ValueError(f"pair {n}: tagged source tokens do not match the bitext source side")
        run.counters["pairs_read"] += 1
        if args.max_sentence_length and max(len(src_words), len(tgt_words)) > args.max_sentence_length:
            run.counters["pairs_excluded"] += 1
            continue
        for token in src_sent.tokens:
            token.predicted, token.gold = token.gold, None
        links = P.intersect_and_filter(f_links, r_links, args.alpha, len(src_words), len(tgt_words))
        run.counters["links_kept"] += len(links)
        run.counters["links_dropped"] += len(set(f_links) | set(r_links)) - len(links)
        target = C.Sentence([C.Token(w) for w in tgt_words])
        pairs.append(P.SentencePair(src_sent, target, links))
    return pairs


def cmd_project(args, run: Run):
    config = P.ProjectionConfig(args.alpha, args.beta, args.max_tokens, CONSTRAINT_FLAGS[args.constraints])
    pairs = _load_pairs(args, run)
    distributions = P.accumulate_type_distributions(pairs)
    dictionary = P.build_type_dictionary(distributions, config.beta)
    lattices = P.build_lattice_corpus(pairs, dictionary, config)
    run.counters["dictionary_entries"] = len(dictionary)
    run.counters["empty_entries"] = sum(1 for tags in dictionary.entries.values() if not tags)
    run.counters["tags"] = len(dictionary.inventory)
    run.counters["lattice_sentences"] = len(lattices)
    run.counters["lattice_tokens"] = sum(len(l) for l in lattices)
    _write_text(args.out_dictionary, P.format_dictionary(dictionary))
    _write_text(args.out_lattices, f"#mode\t{config.constraint_mode}\n" +
                P.format_lattices(lattices, dictionary.inventory))
    return args.out_lattices


def cmd_cluster(args, run: Run):
    sentences = []
    for path in args.corpus:
        sentences += [s.words for s in C.parse_raw_corpus(run.read(path), max_length=0)]
    run.counters["sentences"] = len(sentences)
    result = F.induce_clusters(sentences, args.k, args.max_words, args.iterations, return_trace=True)
    run.counters["moves"] = result.moves
    run.counters["passes"] = result.iterations
    _write_text(args.out, F.format_clusters(result.clusters))
    return args.out


def _read_lattice_file(run: Run, path):
    text = run.read(path)
    mode = None
    if text.startswith("#mode\t"):
        first, text = text.split("\n", 1)
        mode = first.split("\t", 1)[1]
    lattices, inventory = P.parse_lattices(text)
    return lattices, inventory, mode


def _within_budget(items, max_tokens):
    """Leading whole sentences totalling at most ``max_tokens`` tokens."""
    kept, total = [], 0
    for item in items:
        if total + len(item) > max_tokens:
            break
        kept.append(item)
        total += len(item)
    return kept


def _training_lattices(args, run: Run):
    constraints = args.constraints
    if constraints == "gold":
        if not args.gold:
            raise UsageError("--constraints gold needs --gold")
        gold = C.parse_corpus(run.read(args.gold), args.max_sentence_length, run.counters)
        if getattr(args, "first_n_tokens", None):
            gold = C.first_n_tokens(gold, args.first_n_tokens)
        if getattr(args, "restrict_attributes", None):
            gold = C.restrict_to_attribute_types(gold, args.restrict_attributes.split(","))
        gold = _within_budget(gold, args.max_tokens)
        inventory = C.build_tag_inventory(gold)
        return P.gold_lattices(gold, inventory), inventory
    if constraints == "oracle":
        if not args.gold:
            raise UsageError("--constraints oracle needs --gold")
        dictionary = P.build_oracle_dictionary(
            C.parse_corpus(run.read(args.gold), args.max_sentence_length, run.counters))
        if args.text:
            sentences = C.parse_raw_corpus(run.read(args.text), args.max_sentence_length, run.counters)
        elif args.lattices:
            sentences = [lat.sentence for lat in _read_lattice_file(run, args.lattices)[0]]
        else:
            raise UsageError("--constraints oracle needs --text or --lattices for the training sentences")
        return P.lattices_from_sentences(sentences, dictionary, args.max_tokens), dictionary.inventory
    mode = CONSTRAINT_FLAGS[constraints]
    if args.lattices:
        lattices, inventory, file_mode = _read_lattice_file(run, args.lattices)
        if file_mode is not None and file_mode != mode:
            raise UsageError(f"lattice file was built with constraints {file_mode}, not {mode}")
        return _within_budget(lattices, args.max_tokens), inventory
    if args.dictionary and args.text and mode != "type_and_token":
        dictionary = P.parse_dictionary(run.read(args.dictionary))
        if mode == "unambiguous_type":
            dictionary = P.make_unambiguous(dictionary)
        sentences = C.parse_raw_corpus(run.read(args.text), args.max_sentence_length, run.counters)
        return P.lattices_from_sentences(sentences, dictionary, args.max_tokens), dictionary.inventory
    raise UsageError(f"--constraints {constraints} needs --lattices (or --dictionary and --text)")


def _load_optional(args, run: Run):
    embeddings = F.parse_embeddings(run.read(args.embeddings)) if args.embeddings else None
    clusters = F.parse_clusters(run.read(args.clusters)) if args.clusters else None
    return embeddings, clusters


def cmd_train(args, run: Run):
    lattices, inventory = _training_lattices(args, run)
    if not lattices:
        raise ValueError("no training sentences")
    run.counters["sentences_trained"] = len(lattices)
    run.counters["tokens_trained"] = sum(len(l) for l in lattices)
    run.counters["tags"] = len(inventory)
    embeddings, clusters = _load_optional(args, run)
    if args.model == "wsabie":
        config = WS.WsabieConfig(D=args.dim, learning_rate=args.lr, margin=args.margin, epochs=args.epochs,
                                 norm_cap=args.norm_cap, seed=args.seed,
                                 rank_weighting=not args.uniform_weight)
        stats = WS.TrainingStats()
        model = WS.train(lattices, inventory, config, embeddings, clusters, stats)
        run.counters["training_examples"] = stats.examples
        run.counters["updates"] = stats.updates
    else:
        config = H.HmmConfig(l2_strength=args.l2, lbfgs_memory=args.lbfgs_memory,
                             max_iterations=args.max_iterations, convergence_tol=args.tol,
                             rare_threshold=args.rare_threshold, pos_pair_features=not args.no_pos_pair_features,
                             shape_flags=not args.no_shape_flags, threads=args.threads)
        stats = H.TrainingStats()
        model = H.train_lbfgs(lattices, inventory, config, clusters, stats)
        run.counters["lbfgs_iterations"] = stats.iterations
        run.counters["skipped_sentences"] = stats.skipped_sentences
    model.save(args.out)
    return args.out


def cmd_tag(args, run: Run):
    run.inputs[str(args.model)] = _digest(args.model)
    with open(args.model, "rb") as f:
        data = f.read()
    kind = container.loads(data)[0]
    if args.input_format == "conllu":
        sentences = C.parse_corpus(run.read(args.input), args.max_sentence_length, run.counters)
    else:
        sentences = C.parse_raw_corpus(run.read(args.input), args.max_sentence_length, run.counters)
    embeddings = F.parse_embeddings(run.read(args.embeddings)) if args.embeddings else None
    if kind == "wsabie":
        model = WS.WsabieModel.from_bytes(data)
        try:
            extractor = model.extractor(embeddings)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        for sentence in sentences:
            for token, x in zip(sentence.tokens, extractor.sentence(sentence.words)):
                idx = int(WS.np.argmax(WS.score_tags(model, x)))
                token.predicted = model.inventory.tag_at(idx)
    elif kind == "hmm":
        model = H.FeatureHmm.from_bytes(data)
        tables = H.compute_distributions(model)
        dictionary = None
        if args.decode_dictionary:
            dictionary = P.parse_dictionary(run.read(args.decode_dictionary), model.inventory)
        for sentence in sentences:
            allowed = None
            if dictionary is not None:
                allowed = [P.combine_constraints(None, dictionary.get(w), model.inventory) for w in sentence.words]
            for token, tag in zip(sentence.tokens, H.viterbi(model, sentence, allowed, tables)):
                token.predicted = tag
    else:
        raise UsageError(f"unknown model kind {kind}")
    run.counters["sentences_tagged"] = len(sentences)
    run.counters["tokens_tagged"] = sum(len(s) for s in sentences)
    _write_text(args.out, C.serialize_corpus(sentences, use_predicted=True))
    return args.out


def cmd_evaluate(args, run: Run):
    gold = C.parse_corpus(run.read(args.gold), max_length=0)
    pred = C.parse_corpus(run.read(args.pred), max_length=0)
    if args.source_train and args.target_train:
        config = E.EvalConfig.from_corpora(C.parse_corpus(run.read(args.source_train), max_length=0),
                                           C.parse_corpus(run.read(args.target_train), max_length=0),
                                           args.mode, args.macro_over)
    elif args.source_train or args.target_train:
        raise UsageError("--source-train and --target-train go together")
    else:
        # without training corpora every attribute of the gold test data is shared
        pairs = frozenset(p for s in gold for t in s.tokens for p in E.tag_pairs(t.gold).items())
        pos = frozenset(v for a, v in pairs if a == E.POS_ATTRIBUTE)
        config = E.EvalConfig(args.mode, pairs, pairs, pos, args.macro_over)
    report = E.score(gold, pred, config)
    run.counters["tokens"] = report.token_count
    if args.report:
        _write_text(args.report, report.to_lines())
    sys.stdout.write(report.to_table())
    return args.report


# -- argument parsing --------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="key=value file; command-line flags take precedence")
    p.add_argument("--manifest", help="manifest path (default: <output>.manifest.json)")
    p.add_argument("--threads", type=int, default=int(os.environ.get(THREADS_ENV, "1")))
    p.add_argument("--max-sentence-length", type=int, default=C.DEFAULT_MAX_SENTENCE_LENGTH)
    p.add_argument("-v", "--verbose", action="store_true")


def _add_training(p, constraints=True):
    p.add_argument("--model", choices=["wsabie", "hmm"], default="wsabie")
    if constraints:
        p.add_argument("--constraints", choices=["type", "type+token", "unambiguous", "oracle", "gold"],
                       default="type")
        p.add_argument("--lattices", help="lattice file written by 'project'")
        p.add_argument("--dictionary", help="type dictionary (with --text)")
        p.add_argument("--text", help="raw training sentences, one per line")
    p.add_argument("--gold", help="gold annotated corpus")
    p.add_argument("--max-tokens", type=int, default=2_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--embeddings")
    p.add_argument("--clusters")
    p.add_argument("--out", required=True)
    w = p.add_argument_group("wsabie")
    w.add_argument("--lr", type=float, default=0.01)
    w.add_argument("--dim", type=int, default=50)
    w.add_argument("--margin", type=float, default=0.1)
    w.add_argument("--epochs", type=int, default=25)
    w.add_argument("--norm-cap", type=float, default=1.0)
    w.add_argument("--uniform-weight", action="store_true", help="unweighted hinge steps (ablation)")
    h = p.add_argument_group("hmm")
    h.add_argument("--l2", type=float, default=1.0)
    h.add_argument("--lbfgs-memory", type=int, default=10)
    h.add_argument("--max-iterations", type=int, default=100)
    h.add_argument("--tol", type=float, default=1e-5)
    h.add_argument("--rare-threshold", type=int, default=1)
    h.add_argument("--no-pos-pair-features", action="store_true")
    h.add_argument("--no-shape-flags", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="morphproj", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("align", help="IBM Model 1 in both directions")
    _add_common(p)
    p.add_argument("--bitext", required=True)
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--out-fwd", required=True)
    p.add_argument("--out-rev", required=True)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("project", help="type dictionary and constraint lattices from aligned bitext")
    _add_common(p)
    p.add_argument("--bitext", required=True)
    p.add_argument("--source-tagged", required=True, help="tagged source side, one sentence per bitext line")
    p.add_argument("--fwd", required=True)
    p.add_argument("--rev", required=True)
    p.add_argument("--alpha", type=float, default=0.8)
    p.add_argument("--beta", type=float, default=0.3)
    p.add_argument("--constraints", choices=list(CONSTRAINT_FLAGS), default="type")
    p.add_argument("--max-tokens", type=int, default=2_000_000)
    p.add_argument("--out-dictionary", required=True)
    p.add_argument("--out-lattices", required=True)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("cluster", help="exchange-algorithm word clusters")
    _add_common(p)
    p.add_argument("--corpus", required=True, nargs="+")
    p.add_argument("--k", type=int, default=256)
    p.add_argument("--max-words", type=int, default=100_000)
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("train", help="train a tagger on projected, oracle or gold constraints")
    _add_common(p)
    _add_training(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("supervised-train", help="train a tagger on gold annotations")
    _add_common(p)
    _add_training(p, constraints=False)
    p.add_argument("--first-n-tokens", type=int, help="use only the first N tokens (e.g. 1000)")
    p.add_argument("--restrict-attributes", help="comma-separated attribute types to keep")
    p.set_defaults(func=cmd_train, constraints="gold", lattices=None, dictionary=None, text=None)

    p = sub.add_parser("tag", help="tag text with a trained model")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--input-format", choices=["raw", "conllu"], default="raw")
    p.add_argument("--embeddings")
    p.add_argument("--decode-dictionary", help="restrict HMM decoding to these type constraints")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tag)

    p = sub.add_parser("evaluate", help="macro-F1 and POS accuracy")
    _add_common(p)
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--mode", choices=list(E.MODES), default="standard")
    p.add_argument("--source-train")
    p.add_argument("--target-train")
    p.add_argument("--macro-over", choices=["observed", "shared"], default="observed")
    p.add_argument("--report")
    p.set_defaults(func=cmd_evaluate)
    return parser


def _config_defaults(subparser: argparse.ArgumentParser, path) -> dict:
    actions = {a.dest: a for a in subparser._actions}
    values = {}
    for number, line in enumerate(_read_text(path).splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        dest = key.strip().lstrip("-").replace("-", "_")
        if not sep or dest not in actions:
            raise UsageError(f"{path}:{number}: unknown config entry {line!r}")
        action = actions[dest]
        value = value.strip()
        if action.nargs == 0:
            values[dest] = value.lower() in ("1", "true", "yes", "on")
        elif action.nargs in ("+", "*"):
            values[dest] = value.split()
        else:
            values[dest] = action.type(value) if action.type else value
    return values


def _prescan(argv):
    """(subcommand, --config path) found in argv before full parsing."""
    command = next((a for a in argv if not a.startswith("-")), None)
    config = None
    for k, a in enumerate(argv):
        if a == "--config" and k + 1 < len(argv):
            config = argv[k + 1]
        elif a.startswith("--config="):
            config = a.split("=", 1)[1]
    return command, config


def _parse(argv):
    parser = build_parser()
    command, config = _prescan(argv)
    subparsers = parser._subparsers._group_actions[0].choices
    if config and command in subparsers:
        subparser = subparsers[command]
        try:
            defaults = _config_defaults(subparser, config)
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
        except (TypeError, ValueError) as exc:
            raise UsageError(f"{config}: {exc}") from None
        for action in subparser._actions:
            if action.dest in defaults:
                action.required = False
        subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _parse(argv)
    except UsageError as exc:
        sys.stderr.write(f"morphproj: usage error: {exc}\n")
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    job = Run(args)
    try:
        output = args.func(args, job)
        job.write_manifest(output)
    except UsageError as exc:
        sys.stderr.write(f"morphproj {args.command}: usage error: {exc}\n")
        return EXIT_USAGE
    except (OSError, ValueError, KeyError, IndexError, FloatingPointError) as exc:
        sys.stderr.write(f"morphproj {args.command}: error: {exc}\n")
        return EXIT_DATA
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
