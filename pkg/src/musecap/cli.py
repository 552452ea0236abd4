"""Command-line entry point: ``musecap {train,caption,chain,eval,inspect-config}``.

Results go to standard output, logs to standard error. Exit codes: 0 on
success, 2 for configuration and validation errors, 3 for runtime and
numeric failures, 4 when the external chat service fails.
"""

import argparse
import json
import logging
import shutil
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import yaml

from musecap import __version__
from musecap.analysis.describe import describe_labels
from musecap.analysis.report import evaluate
from musecap.config import RunConfig, load_config
from musecap.errors import MusecapError, NumericalError
from musecap.io.audio import load_audio
from musecap.io.cache import EmbeddingCache
from musecap.io.chat import AuditLog, ChatClient, ChatSettings, build_client
from musecap.io.checkpoint import load_checkpoint, save_checkpoint
from musecap.io.manifest import ManifestRecord, load_manifest, load_texts
from musecap.models.captioner import Captioner
from musecap.models.encoder import build_encoder
from musecap.models.lm import ToyLanguageModel, build_language_model
from musecap.models.projector import MusicProjector
from musecap.processing.chaining import build_prompt, caption_chunks, chain, song_name_for
from musecap.processing.training import prepare_examples, train_phase, write_trace
from musecap.visualization.plots import plot_layer_weights, plot_loss_trace

logger = logging.getLogger("musecap")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _manifests(config: RunConfig) -> dict[str, list[ManifestRecord]]:
    return {phase.dataset_id: load_manifest(phase.dataset_id, config.vocabularies) for phase in config.phases}


def _language_model(config: RunConfig, corpus: list[str]) -> tuple[Any, dict[str, Any]]:
    """Build the frozen LM and the spec stored in checkpoints."""
    lm = build_language_model(config.lm.spec(), corpus=corpus)
    if isinstance(lm, ToyLanguageModel):
        return lm, lm.to_spec()
    if lm.dim != config.projector.lm_dim:
        raise MusecapError(f"language model embedding width {lm.dim} differs from projector.lm_dim {config.projector.lm_dim}")
    return lm, {"kind": config.lm.kind, "model_name": config.lm.model_name, "dim": lm.dim}


def cmd_train(args: argparse.Namespace) -> int:
    """Run every configured phase in order, checkpointing after each."""
    config = load_config(args.config)
    manifests = _manifests(config)
    corpus = [record.caption for records in manifests.values() for record in records] + [config.lm.query]
    lm, lm_spec = _language_model(config, corpus)
    encoder = build_encoder(config.encoder)
    captioner = Captioner(encoder, MusicProjector(config.projector), lm, query=config.lm.query, max_tokens=config.lm.max_tokens)
    cache = EmbeddingCache(config.cache_dir)
    frozen_before = (encoder.parameter_digest(), lm.parameter_digest())

    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    checkpoint = out / "checkpoint.pt"
    for i, phase in enumerate(config.phases, start=1):
        examples = prepare_examples(manifests[phase.dataset_id], config.vocabularies, encoder, config.encoder, cache)
        result = train_phase(phase, captioner, examples)
        stem = f"{i:02d}_{phase.name}"
        write_trace(result.trace, out / f"{stem}.trace.csv")
        if result.steps:
            plot_loss_trace(result.trace, out / f"{stem}.loss.png", title=phase.name)
        plot_layer_weights(captioner.projector, out / f"{stem}.layers.png")
        save_checkpoint(out / f"{stem}.pt", captioner.projector, config.vocabularies, lm_spec, config.encoder, config.lm.query, phase=phase.name)
        shutil.copyfile(out / f"{stem}.pt", checkpoint)

    if (encoder.parameter_digest(), lm.parameter_digest()) != frozen_before:
        raise NumericalError("frozen encoder or language model parameters changed during training")
    print(checkpoint)
    return 0


def _captioner(args: argparse.Namespace) -> tuple[Captioner, RunConfig | None]:
    config = load_config(args.config) if args.config else None
    checkpoint = load_checkpoint(args.checkpoint, expected_digest=config.expected_digest() if config else None)
    max_tokens = args.max_tokens or (config.lm.max_tokens if config else 32)
    return Captioner.from_checkpoint(checkpoint, max_tokens=max_tokens), config


def cmd_caption(args: argparse.Namespace) -> int:
    """Caption one audio file."""
    captioner, _ = _captioner(args)
    clip = load_audio(args.audio, target_sample_rate=captioner.encoder.config.sample_rate)  # type: ignore[attr-defined]
    print(captioner.caption(clip))
    return 0


def _client(args: argparse.Namespace, config: RunConfig | None) -> tuple[ChatClient, ChatSettings]:
    settings = config.chat if config else ChatSettings()
    kind = args.client or (config.chat_client if config else "http")
    return build_client(kind, settings), settings


def cmd_chain(args: argparse.Namespace) -> int:
    """Caption 10 s chunks, render the chaining prompt and ask the chat model for a long caption."""
    captioner, config = _captioner(args)
    client = settings = None
    if not args.dry_run:
        client, settings = _client(args, config)
    clip_len = args.clip_len or (config.data.clip_len_s if config else 10.0)
    clip = load_audio(args.audio, target_sample_rate=captioner.encoder.config.sample_rate)  # type: ignore[attr-defined]
    chunks = caption_chunks(clip, captioner, clip_len_s=clip_len, max_workers=args.workers)
    prompt = build_prompt(song_name_for(args.audio, args.song_name), chunks)
    if args.dry_run:
        print(prompt.rendered)
        return 0
    audit_path = args.audit_log or (config.audit_log if config else None)
    audit_log = AuditLog(audit_path) if audit_path else None
    print(chain(prompt, client, settings=settings, audit_log=audit_log))  # type: ignore[arg-type]
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    """Score predictions against references and print the JSON report."""
    config = load_config(args.config) if args.config else None
    predictions = load_texts(args.predictions)
    references = load_texts(args.references)
    client = settings = None
    if args.with_judge:
        client, settings = _client(args, config)
    report = evaluate(predictions, references, judge_client=client, settings=settings, max_workers=args.workers)
    text = json.dumps(report.to_dict(), indent=2)
    if args.output:
        Path(args.output).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_inspect_config(args: argparse.Namespace) -> int:
    """Print the resolved config, token budget, vocabularies and label statistics."""
    config = load_config(args.config)
    proj = config.projector
    print(yaml.safe_dump(config.to_dict(), sort_keys=False, allow_unicode=True).rstrip())
    print()
    per_head = " + ".join(f"{h.n_tokens} ({h.name})" for h in proj.heads) or "0"
    print(f"Token budget: {proj.content_tokens} content + {per_head} feature = {proj.music_token_count} / {proj.token_budget}")
    print("Vocabularies: " + ", ".join(f"{task}={len(vocab)}" for task, vocab in config.vocabularies.items()))
    print(f"Checkpoint digest: {config.expected_digest()}")
    for phase in config.phases:
        records = load_manifest(phase.dataset_id, config.vocabularies)
        print()
        print(f"== {phase.name}: {phase.dataset_id} ({len(records)} records)")
        print(describe_labels(records, config.vocabularies))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="musecap", description="Multi-task music captioning with a frozen language model")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the projector through every configured phase")
    p.add_argument("config", type=Path)
    p.set_defaults(func=cmd_train)

    def add_model_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("checkpoint", type=Path)
        p.add_argument("audio", type=Path)
        p.add_argument("--config", type=Path, help="run config the checkpoint must match")
        p.add_argument("--max-tokens", type=int, default=None)

    p = sub.add_parser("caption", help="caption one audio file")
    add_model_args(p)
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("chain", help="long caption via chunk captions and a chat model")
    add_model_args(p)
    p.add_argument("--song-name", default=None, help="defaults to the audio file name")
    p.add_argument("--dry-run", action="store_true", help="print the prompt instead of calling the chat service")
    p.add_argument("--client", choices=["http", "echo"], default=None)
    p.add_argument("--clip-len", type=float, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--audit-log", type=Path, default=None)
    p.set_defaults(func=cmd_chain)

    p = sub.add_parser("eval", help="score predictions against references")
    p.add_argument("predictions", type=Path)
    p.add_argument("references", type=Path)
    p.add_argument("--with-judge", action="store_true")
    p.add_argument("--client", choices=["http", "echo"], default=None)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--output", type=Path, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect-config", help="show the resolved run config")
    p.add_argument("config", type=Path)
    p.set_defaults(func=cmd_inspect_config)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format=LOG_FORMAT, stream=sys.stderr)
    try:
        return int(args.func(args))
    except MusecapError as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
