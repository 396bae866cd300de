"""Command-line surface: prepare, train, eval, channels, recommend, cooccur.

Heavy imports happen inside handlers so --threads can pin BLAS thread
counts before numpy is loaded. Exit codes: 0 success, 1 runtime failure,
2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .errors import IntentcfError, ParameterError, UsageError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="intentcf", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None, help="BLAS thread count for this process")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="BLAS thread count for this process")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="filter, split and serialize a ratings file", parents=[common])
    p.add_argument("--ratings", required=True)
    p.add_argument("--genres", default=None, help="item_id|genre1,genre2 file, copied into the output")
    p.add_argument("--out", required=True)
    p.add_argument("--delimiter", default=None)
    p.add_argument("--skip-header", action="store_true")
    p.add_argument("--min-interactions", type=int, default=10)
    p.add_argument("--fractions", default="0.6,0.1,0.3")
    p.add_argument("--rating-threshold", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="run the two-stage optimization", parents=[common])
    p.add_argument("--data", required=True, help="directory written by prepare")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="JSON config file; flags override it")
    p.add_argument("--variant", choices=["ddcf", "ddcf-n", "ddcf-s", "k1-baseline"], default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--skip-pretrain", action="store_true")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", help="ranking metrics on the test split", parents=[common])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--cutoffs", default="5,10")
    p.add_argument("--valid", action="store_true", help="evaluate the validation split instead of test")
    p.add_argument("--json", action="store_true")
    p.add_argument("--out", default=None, help="also write the report to this path")

    p = sub.add_parser("channels", help="inspect learned intent channels", parents=[common])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--top", type=int, default=10, help="items listed per channel")
    p.add_argument("--user", default=None, help="external user id for the per-user channel view")
    p.add_argument("--user-channels", type=int, default=3)
    p.add_argument("--json", action="store_true")
    p.add_argument("--out", default=None)

    p = sub.add_parser("recommend", help="ranked recommendations for a user", parents=[common])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--user", default=None, help="external user id")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--channel", type=int, default=None, help="rank inside one intent channel")
    p.add_argument("--intent", default=None, metavar="C:W,C:W", help="user-supplied intent distribution")
    p.add_argument("--similar-to", default=None, metavar="ITEM", help="rank items by intent similarity instead")
    p.add_argument("--similarity", choices=["cosine", "symkl"], default="cosine")
    p.add_argument("--json", action="store_true")
    p.add_argument("--out", default=None)

    p = sub.add_parser("cooccur", help="genre co-occurrence of channel top items vs shuffled baseline", parents=[common])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--genres", default=None, help="defaults to genres.txt inside the data directory")
    p.add_argument("--top", type=int, default=20)
    p.add_argument("--shuffles", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--matrix", choices=["beta", "phi"], default="beta")
    p.add_argument("--json", action="store_true")
    p.add_argument("--out", default=None)
    return parser


def _emit(text: str, out_path: str | None) -> None:
    print(text)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def _provenance(state) -> dict:
    return {"config_hash": state.cfg.config_hash(), "seed": state.cfg.seed, "variant": state.cfg.variant}


def _load_state_and_data(args):
    from .data import load_split
    from .training import load_checkpoint

    if not os.path.exists(args.checkpoint):
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    if not os.path.isdir(args.data):
        raise UsageError(f"prepared data directory not found: {args.data}")
    state = load_checkpoint(args.checkpoint)
    split = load_split(args.data)
    if split.train.n_items != state.n_items or split.train.n_users != state.n_users:
        raise UsageError(
            f"checkpoint (N={state.n_users}, M={state.n_items}) does not match "
            f"dataset (N={split.train.n_users}, M={split.train.n_items})"
        )
    return state, split


def _user_index(split, ext_id: str) -> int:
    try:
        return split.train.user_ids.index(ext_id)
    except ValueError:
        raise UsageError(f"unknown user id {ext_id!r}") from None


def _item_index(split, ext_id: str) -> int:
    try:
        return split.train.item_ids.index(ext_id)
    except ValueError:
        raise UsageError(f"unknown item id {ext_id!r}") from None


def cmd_prepare(args) -> int:
    from .data import GenreTable, filter_min_interactions, load_ratings, save_split, split_per_user

    if not os.path.exists(args.ratings):
        raise UsageError(f"ratings file not found: {args.ratings}")
    if args.genres and not os.path.exists(args.genres):
        raise UsageError(f"genre file not found: {args.genres}")
    fractions = tuple(float(x) for x in args.fractions.split(","))
    if len(fractions) != 3:
        raise UsageError(f"--fractions needs three comma-separated values, got {args.fractions!r}")
    matrix = load_ratings(args.ratings, delimiter=args.delimiter, skip_header=args.skip_header)
    matrix = filter_min_interactions(matrix, args.min_interactions)
    ds = split_per_user(matrix, seed=args.seed, fractions=fractions, rating_threshold=args.rating_threshold)
    extra = [f"min_interactions: {args.min_interactions}", f"source: {os.path.basename(args.ratings)}"]
    if args.genres:
        table = GenreTable.load(args.genres)
        covered = sum(1 for i in matrix.item_ids if i in table.genres)
        os.makedirs(args.out, exist_ok=True)
        with open(args.genres, encoding="utf-8") as src, \
                open(os.path.join(args.out, "genres.txt"), "w", encoding="utf-8") as dst:
            dst.write(src.read())
        extra.append(f"genre_coverage: {covered}/{matrix.n_items}")
    manifest = save_split(ds, args.out, extra_manifest=extra)
    with open(manifest, encoding="utf-8") as fh:
        print(fh.read().rstrip())
    return 0


def _parse_set_overrides(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"--set expects KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def cmd_train(args) -> int:
    from .data import load_split
    from .training import TrainConfig, train

    file_cfg: dict = {}
    if args.config:
        if not os.path.exists(args.config):
            raise UsageError(f"config file not found: {args.config}")
        with open(args.config, encoding="utf-8") as fh:
            try:
                file_cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise UsageError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")
    data_dir = file_cfg.pop("data_dir", None) or args.data
    file_cfg.pop("out_dir", None)
    file_cfg.update(_parse_set_overrides(args.set))
    if args.variant is not None:
        file_cfg["variant"] = args.variant
    if args.seed is not None:
        file_cfg["seed"] = args.seed
    if args.skip_pretrain:
        file_cfg["skip_pretrain"] = True
    cfg = TrainConfig.from_dict(file_cfg)
    cfg.validate()
    if not os.path.isdir(data_dir):
        raise UsageError(f"prepared data directory not found: {data_dir}")
    split = load_split(data_dir)
    log = None if args.quiet else lambda r: print(
        f"[{r['stage']:>8} {r['epoch']:>3}] total={r['total']:.1f} "
        f"val={r.get('val_recall_at_10', float('nan')):.4f} tau={r['tau']:.3f} eta={r['eta']:.3f}"
    )
    result = train(split, cfg, args.out, resume_from=args.resume, log=log)
    print(f"best checkpoint: {result.best_checkpoint} (val R@10 = "
          f"{result.best_val if result.best_val > -1 else float('nan'):.4f} at epoch {result.best_epoch})")
    print(f"manifest: {result.manifest_path}")
    return 0


def cmd_eval(args) -> int:
    import dataclasses

    from .evaluation import evaluate
    from .training import scorer_from_state

    state, split = _load_state_and_data(args)
    cutoffs = tuple(int(x) for x in args.cutoffs.split(","))
    if args.valid:
        split = dataclasses.replace(split, test=split.valid)
    report = evaluate(scorer_from_state(state), split, cutoffs=cutoffs)
    report.seed = state.cfg.seed
    prov = _provenance(state)
    if args.json:
        payload = {**prov, "split": "valid" if args.valid else "test", **report.as_dict()}
        _emit(json.dumps(payload, indent=1, sort_keys=True), args.out)
    else:
        head = f"config_hash: {prov['config_hash']}  seed: {prov['seed']}  variant: {prov['variant']}"
        _emit(head + "\n" + report.text_table(), args.out)
    return 0


def cmd_channels(args) -> int:
    import numpy as np

    from .intent import top_items_per_channel
    from .preference import select_top_channels
    from .training import scorer_from_state

    state, split = _load_state_and_data(args)
    scorer = scorer_from_state(state)
    beta = state.intent.beta().data  # (M, K)
    prov = _provenance(state)
    items = split.train.item_ids
    payload: dict = {**prov, "k": state.cfg.k, "top": args.top}
    lines = [f"config_hash: {prov['config_hash']}  seed: {prov['seed']}  variant: {prov['variant']}"]
    if args.user is not None:
        u = _user_index(split, args.user)
        gamma = scorer.gamma(split.train, np.array([u]))[0]
        sel = select_top_channels(gamma, min(args.user_channels, state.cfg.k))
        payload["user"] = args.user
        payload["channels"] = []
        lines.append(f"user {args.user}: top {len(sel.channel_indices)} intent channels")
        top = top_items_per_channel(beta, args.top)
        for c, w in zip(sel.channel_indices, sel.weights):
            names = [items[j] for j, _ in top[c]]
            payload["channels"].append({"channel": int(c), "weight": float(w), "top_items": names})
            lines.append(f"  channel {c} (weight {w:.3f}): {', '.join(names)}")
    else:
        top = top_items_per_channel(beta, args.top)
        payload["channels"] = []
        for c, channel in enumerate(top):
            names = [items[j] for j, _ in channel]
            probs = [p for _, p in channel]
            payload["channels"].append(
                {"channel": c, "top_items": names, "probabilities": [round(p, 6) for p in probs]}
            )
            lines.append(f"channel {c}: {', '.join(names)}")
    _emit(json.dumps(payload, indent=1, sort_keys=True) if args.json else "\n".join(lines), args.out)
    return 0


def _parse_intent(spec: str) -> dict[int, float]:
    out: dict[int, float] = {}
    for part in spec.split(","):
        if ":" not in part:
            raise UsageError(f"--intent expects C:W pairs, got {part!r}")
        c, w = part.split(":", 1)
        try:
            out[int(c)] = float(w)
        except ValueError:
            raise UsageError(f"bad intent pair {part!r}") from None
    return out


def cmd_recommend(args) -> int:
    from .recommend import (
        IntentOverride,
        recommend_blended,
        recommend_in_channel,
        recommend_with_intent,
        similar_items,
    )
    from .training import scorer_from_state

    state, split = _load_state_and_data(args)
    scorer = scorer_from_state(state)
    prov = _provenance(state)
    items = split.train.item_ids
    head = f"config_hash: {prov['config_hash']}  seed: {prov['seed']}  variant: {prov['variant']}"
    if args.similar_to is not None:
        j = _item_index(split, args.similar_to)
        ranked = similar_items(state.intent, scorer.phi, j, args.n, measure=args.similarity)
        rows = [{"item": items[i], "similarity": round(s, 6)} for i, s in ranked]
        if args.json:
            _emit(json.dumps({**prov, "similar_to": args.similar_to, "items": rows}, indent=1, sort_keys=True),
                  args.out)
        else:
            lines = [head, f"items similar to {args.similar_to} ({args.similarity}):"]
            lines += [f"  {r['item']}  {r['similarity']:.4f}" for r in rows]
            _emit("\n".join(lines), args.out)
        return 0
    if args.user is None:
        raise UsageError("recommend needs --user (or --similar-to ITEM)")
    u = _user_index(split, args.user)
    if args.intent is not None and args.channel is not None:
        raise UsageError("--intent and --channel are mutually exclusive")
    if args.intent is not None:
        ranked = recommend_with_intent(scorer, split, u, IntentOverride(_parse_intent(args.intent)), args.n)
        mode = f"intent {args.intent}"
    elif args.channel is not None:
        ranked = recommend_in_channel(scorer, split, u, args.channel, args.n)
        mode = f"channel {args.channel}"
    else:
        ranked = recommend_blended(scorer, split, u, args.n)
        mode = "blended"
    rows = [{"item": items[i], "score": float(s)} for i, s in zip(ranked.items, ranked.scores)]
    if args.json:
        _emit(json.dumps({**prov, "user": args.user, "mode": mode, "items": rows}, indent=1, sort_keys=True),
              args.out)
    else:
        lines = [head, f"recommendations for user {args.user} ({mode}):"]
        lines += [f"  {r['item']}  {r['score']:.4f}" for r in rows]
        _emit("\n".join(lines), args.out)
    return 0


def cmd_cooccur(args) -> int:
    from .data import GenreTable
    from .evaluation import cooccurrence_rate
    from .training import scorer_from_state

    state, split = _load_state_and_data(args)
    genres_path = args.genres or os.path.join(args.data, "genres.txt")
    if not os.path.exists(genres_path):
        raise UsageError(f"genre file not found: {genres_path} (pass --genres)")
    table = GenreTable.load(genres_path)
    genre_sets = table.for_matrix(split.train)
    if args.matrix == "beta":
        channel_item = state.intent.beta().data  # (M, K)
    else:
        channel_item = scorer_from_state(state).phi.T  # phi is (K, M)
    report = cooccurrence_rate(channel_item, genre_sets, top_t=args.top,
                               shuffles=args.shuffles, seed=args.seed)
    prov = _provenance(state)
    if args.json:
        _emit(json.dumps({**prov, "matrix": args.matrix, **report.as_dict()}, indent=1, sort_keys=True),
              args.out)
    else:
        lines = [
            f"config_hash: {prov['config_hash']}  seed: {prov['seed']}  variant: {prov['variant']}",
            f"co-occurrence rate ({args.matrix}, top {report.top_t} items/channel): {report.rate:.4f}",
            f"shuffled baseline ({report.shuffles} shuffles): {report.baseline_rate:.4f}",
            "per-channel: " + ", ".join(f"{r:.3f}" for r in report.per_channel),
        ]
        _emit("\n".join(lines), args.out)
    return 0


_HANDLERS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "channels": cmd_channels,
    "recommend": cmd_recommend,
    "cooccur": cmd_cooccur,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return 2
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        return _HANDLERS[args.command](args)
    except (UsageError, ParameterError) as exc:
        # parameter errors reaching the CLI stem from user-supplied values
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except IntentcfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
