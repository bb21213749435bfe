"""Command-line interface.

Exit codes: 0 success, 2 invalid input or parse failure, 3 missing
asset, 4 divergence or checkpoint failure. The environment variable
``AMBIVOX_OUTPUT_ROOT``, when set, is prepended to relative output
paths passed to ``--out``/``--plots``.
"""

from __future__ import annotations

import functools
import hashlib
import json
import os
import sys
from pathlib import Path

import click

from . import adversaries, corpus, metrics, reporting
from .errors import AmbivoxError
from .frontend import read_wav, write_wav
from .trainer import AmbiguousVoiceGan, file_digest, parse_config_file


def _out_path(value):
    path = Path(value)
    root = os.environ.get("AMBIVOX_OUTPUT_ROOT")
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except AmbivoxError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.exit_code)

    return wrapper


@click.group()
def main():
    """Gender-ambiguous voice synthesis and its attack-scenario harness."""


@main.group(name="corpus")
def corpus_group():
    """Synthetic corpus commands."""


@corpus_group.command(name="build")
@click.option("--out", "out_dir", required=True, help="Corpus output directory.")
@click.option("--n-speakers", default=20, show_default=True)
@click.option("--utterances-per-speaker", default=30, show_default=True)
@click.option("--vocabulary-size", default=16, show_default=True)
@click.option("--words-per-utterance", default=4, show_default=True)
@click.option("--seed", default=0, show_default=True)
@_handle_errors
def corpus_build(out_dir, n_speakers, utterances_per_speaker, vocabulary_size,
                 words_per_utterance, seed):
    """Synthesize a gendered voice corpus and write its manifest."""
    out = _out_path(out_dir)
    records = corpus.build_corpus(
        out, n_speakers=n_speakers,
        utterances_per_speaker=utterances_per_speaker,
        vocabulary_size=vocabulary_size,
        words_per_utterance=words_per_utterance, seed=seed,
    )
    click.echo(f"wrote {len(records)} utterances under {out}")


def _load_transformer_config(config):
    params = {}
    if config is not None:
        params = parse_config_file(config)
    return params


@main.command()
@click.option("--manifest", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True,
              help="Directory for checkpoint.avxc and state.avxc.")
@click.option("--config", type=click.Path(), default=None,
              help="key=value training configuration file.")
@click.option("--resume", "resume_state", type=click.Path(), default=None,
              help="Resume from a previously written train state.")
@click.option("--checkpoint-every", default=10, show_default=True)
@_handle_errors
def train(manifest, out_dir, config, resume_state, checkpoint_every):
    """Train the voice transformer on the manifest's train split."""
    records = corpus.load_manifest(manifest)
    train_records = corpus.split_records(records, "train") or records
    out = _out_path(out_dir)
    if resume_state is not None:
        model = AmbiguousVoiceGan.resume(resume_state)
        if config is not None:
            raise click.UsageError("--config cannot be combined with --resume")
    else:
        model = AmbiguousVoiceGan(**_load_transformer_config(config))
    model.fit(train_records, checkpoint_dir=out, checkpoint_every=checkpoint_every)
    last = model.loss_history_[-1]
    click.echo(
        f"trained {model.epochs} epochs; final losses: "
        f"G={last['g_total']:.5f} (distortion {last['distortion']:.5f}) "
        f"D={last['d_total']:.5f}"
    )
    click.echo(f"checkpoint: {out / 'checkpoint.avxc'}")


@main.command()
@click.argument("in_wav", type=click.Path())
@click.argument("out_wav", type=click.Path())
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@_handle_errors
def transform(in_wav, out_wav, checkpoint, seed):
    """Privacy-transform one WAV file."""
    model = AmbiguousVoiceGan.load_checkpoint(checkpoint)
    wave = read_wav(in_wav)
    out = _out_path(out_wav)
    write_wav(out, model.transform(wave, seed=seed))
    click.echo(f"wrote {out}")


@main.group()
def attackers():
    """Attacker-suite commands."""


@attackers.command(name="train")
@click.option("--manifest", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True,
              help="Directory for the attacker model files.")
@click.option("--seed", default=0, show_default=True)
@_handle_errors
def attackers_train(manifest, out_dir, seed):
    """Train gender, speaker and transcription attackers on originals."""
    records = corpus.load_manifest(manifest)
    train_records = corpus.split_records(records, "train") or records
    waves = [r.load_audio() for r in train_records]
    out = _out_path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    gender = adversaries.GenderClassifier(seed=seed)
    gender.fit(waves, [r.gender_label for r in train_records])
    gender.save(out / "gender.avxc")
    click.echo(f"gender classifier: train accuracy {gender.accuracy_log_[-1]:.3f}")

    speaker = adversaries.SpeakerVerifier(seed=seed)
    speaker.fit(waves, [r.speaker_id for r in train_records])
    speaker.save(out / "speaker.avxc")
    click.echo(f"speaker verifier: {len(speaker.speakers_)} speakers")

    transcriber = adversaries.TemplateTranscriber()
    transcriber.fit(waves, [r.transcript for r in train_records])
    transcriber.save(out / "transcriber.avxc")
    click.echo(
        f"transcriber: {len(transcriber.templates_)} templates "
        f"(alignment rate {transcriber.alignment_rate_:.2f})"
    )


@main.command()
@click.option("--checkpoint", type=click.Path(), default=None,
              help="Transformer checkpoint; omit to evaluate original audio.")
@click.option("--manifest", required=True, type=click.Path())
@click.option("--attackers", "attackers_dir", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--label", default=None, help="Row label in rendered tables.")
@_handle_errors
def evaluate(checkpoint, manifest, attackers_dir, out_path, seed, label):
    """Run the attack scenario and write a JSON metrics report."""
    records = corpus.load_manifest(manifest)
    attackers_dir = Path(attackers_dir)
    gender = adversaries.GenderClassifier.load(attackers_dir / "gender.avxc")
    speaker = adversaries.SpeakerVerifier.load(attackers_dir / "speaker.avxc")
    transcriber = adversaries.TemplateTranscriber.load(
        attackers_dir / "transcriber.avxc"
    )
    if checkpoint is not None:
        model = AmbiguousVoiceGan.load_checkpoint(checkpoint)
        ckpt_digest = file_digest(checkpoint)
        config_digest = hashlib.sha256(
            json.dumps(model.get_params(), sort_keys=True).encode()
        ).hexdigest()
    else:
        model = None
        ckpt_digest = "identity"
        config_digest = "identity"
    report = metrics.evaluate(
        model, records, gender, speaker, transcriber, seed=seed,
        label=label or ("original" if model is None else "transformed"),
        metadata={"checkpoint_digest": ckpt_digest,
                  "config_digest": config_digest},
    )
    out = _out_path(out_path)
    report.save(out)
    click.echo(reporting.format_table([report]))
    click.echo(f"report: {out}")


@main.command(name="report")
@click.option("--in", "in_paths", multiple=True, required=True,
              type=click.Path(), help="Report JSON (repeatable).")
@click.option("--plots", "plots_dir", type=click.Path(), default=None)
@_handle_errors
def report_cmd(in_paths, plots_dir):
    """Render stored reports as a table and optional plots."""
    reports = []
    for p in in_paths:
        if not Path(p).exists():
            from .errors import MissingAsset

            raise MissingAsset(p)
        reports.append(metrics.MetricsReport.load(p))
    out_dir = _out_path(plots_dir) if plots_dir else None
    click.echo(reporting.render_report(reports, out_dir=out_dir))
    if out_dir:
        click.echo(f"plots and tables under {out_dir}")


if __name__ == "__main__":
    main()
