"""Command-line entry point: one subcommand per back-end stage plus ``run``."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Annotated

import numpy as np
import typer
from jsonschema.exceptions import ValidationError

from .calibration import (
    CalibrationTrialSpec,
    fit,
    fit_fusion,
    fuse,
    load_model,
    save_model,
)
from .core_io import (
    ScoreSet,
    TrialList,
    load_cohort,
    load_embeddings,
    load_frame_corpus,
    load_scores,
    load_trials,
    save_cohort,
    save_scores,
)
from .margin_train import load_train_plan, save_toy_model, train_toy
from .metrics import DcfParams, evaluate_scores, format_metric_line
from .pipeline import load_pipeline_config
from .quality import (
    CombineMode,
    QmfConfig,
    assemble_quality_matrix,
    check_quality_alignment,
    fill_speech_frames,
    load_frame_energies,
    load_quality,
    save_quality,
)
from .run_reports import write_run_report
from .scoring import Scorer, SnormConfig, adaptive_snorm, build_cohort, score_trials
from .simulator import SimConfig, write_simulation
from .x_cls_make_speaker_backend_x import XClsMakeSpeakerBackendX
from .x_env_x import default_log_level, default_workers
from .x_logging_utils_x import log_error, set_log_level

if TYPE_CHECKING:
    from .core_io import Cohort, FloatArray

app = typer.Typer(
    add_completion=False,
    no_args_is_help=True,
    help="Speaker verification back-end: scoring, s-norm, QMFs, calibration.",
)

_HANDLED_ERRORS = (ValueError, RuntimeError, OSError, KeyError, ValidationError)


@dataclass(slots=True)
class CliState:
    seed: int = 7
    seed_given: bool = False
    threads: int = 1
    report_json: Path | None = None

    def report(self, payload: dict[str, object]) -> None:
        if self.report_json is not None:
            write_run_report(payload, self.report_json)


def _state(ctx: typer.Context) -> CliState:
    state = ctx.obj
    if not isinstance(state, CliState):
        state = CliState()
        ctx.obj = state
    return state


def _fail(exc: BaseException) -> typer.Exit:
    log_error("command failed:", exc)
    typer.echo(f"error: {exc}", err=True)
    return typer.Exit(code=1)


@app.callback()
def _main(
    ctx: typer.Context,
    seed: Annotated[
        int | None,
        typer.Option(help="Seed for every randomized step; defaults to 7."),
    ] = None,
    threads: Annotated[
        int | None,
        typer.Option(help="Worker threads; defaults to X_SPEAKER_BACKEND_THREADS."),
    ] = None,
    report_json: Annotated[
        Path | None,
        typer.Option("--report-json", help="Also write a JSON report here."),
    ] = None,
    verbose: Annotated[bool, typer.Option("--verbose", "-v")] = False,
) -> None:
    set_log_level(logging.DEBUG if verbose else default_log_level())
    ctx.obj = CliState(
        seed=7 if seed is None else seed,
        seed_given=seed is not None,
        threads=threads if threads is not None else default_workers(),
        report_json=report_json,
    )


def _cohort_from(
    cohort_file: Path | None, cohort_embeddings: Path | None
) -> Cohort:
    if cohort_file is not None:
        return load_cohort(cohort_file)
    if cohort_embeddings is not None:
        return build_cohort(load_embeddings(cohort_embeddings))
    msg = "either --cohort or --cohort-embeddings is required"
    raise ValueError(msg)


def _qmf_config(enable: str, combine: str, clip: int | None) -> QmfConfig:
    kinds = tuple(part.strip() for part in enable.split(",") if part.strip())
    return QmfConfig(
        enabled=kinds,  # type: ignore[arg-type]
        combine=CombineMode(combine),
        duration_clip_frames=clip,
    )


def _score_column(scores: ScoreSet) -> FloatArray:
    return scores.normalized if scores.normalized is not None else scores.raw


def _labels_for(trials: TrialList, labeled: TrialList) -> np.ndarray:
    lookup = {(t.enroll_id, t.test_id): t for t in labeled}
    ordered = []
    for position, trial in enumerate(trials):
        match = lookup.get((trial.enroll_id, trial.test_id))
        if match is None:
            msg = f"trial {position} ({trial.enroll_id}, {trial.test_id}) has no label"
            raise ValueError(msg)
        ordered.append(match)
    return TrialList(tuple(ordered)).labels_array()


@app.command()
def score(
    ctx: typer.Context,
    embeddings: Annotated[Path, typer.Option(exists=True, dir_okay=False)],
    trials: Annotated[Path, typer.Option(exists=True, dir_okay=False)],
    output: Annotated[Path, typer.Option("--output", "-o")],
    scorer: Annotated[str, typer.Option(help="cosine or inner")] = Scorer.COSINE.value,
) -> None:
    """Raw trial scores."""

    state = _state(ctx)
    try:
        trial_list = load_trials(trials)
        scores = score_trials(trial_list, load_embeddings(embeddings), Scorer(scorer))
        save_scores(scores, trial_list, output)
    except _HANDLED_ERRORS as exc:
        raise _fail(exc) from exc
    state.report({"command": "score", "trials": len(trial_list), "output": str(output)})


@app.command()
def snorm(  # noqa: PLR0913 - one option per input file
    ctx: typer.Context,
    embeddings: Annotated[Path, typer.Option(exists=True, dir_okay=False)],
    scores: Annotated[Path, typer.Option(exists=True, dir_okay=False)],
    output: Annotated[Path, typer.Option("--output", "-o")],
    cohort: Annotated[Path | None, typer.Option()] = None,
    cohort_embeddings: Annotated[Path | None, typer.Option()] = None,
    save_cohort_to: Annotated[Path | None, typer.Option("--save-cohort")] = None,
    top_n: Annotated[int, typer.Option()] = 100,
    scorer: Annotated[str, typer.Option()] = Scorer.COSINE.value,
    rank_sim: Annotated[
        str, typer.Option(help="Cohort ranking similarity: cosine or inner.")
    ] = Scorer.COSINE.value,
) -> None:
    """Adaptive s-norm of an existing score file."""

    state = _state(ctx)
    try:
        resolved = _cohort_from(cohort, cohort_embeddings)
        if save_cohort_to is not None:
            save_cohort(resolved, save_cohort_to)
        trial_list, raw = load_scores(scores)
        normalized = adaptive_snorm(
            trial_list,
            ScoreSet(raw.raw),
            load_embeddings(embeddings),
            resolved,
            SnormConfig(cohort_top_n=top_n, similarity=Scorer(rank_sim)),
            scorer=Scorer(scorer),
            workers=state.threads,
        )
        save_scores(normalized, trial_list, output)
    except _HANDLED_ERRORS as exc:
        raise _fail(exc) from exc
    state.report(
        {"command": "snorm", "trials": len(trial_list), "cohort_size": resolved.size}
    )


@app.command()
def qmf(  # noqa: PLR0913 - one option per QMF knob
    ctx: typer.Context,
    embeddings: Annotated[Path, typer.Option(exists=True, dir_okay=False)],
    trials: Annotated[Path, typer.Option(exists=True, dir_okay=False)],
    output: Annotated[Path, typer.Option("--output", "-o")],
    enable: Annotated[
        str, typer.Option(help="Comma-separated QMF kinds.")
    ] = "duration",
    combine: Annotated[str, typer.Option()] = CombineMode.MIN_MAX.value,
    clip: Annotated[int | None, typer.Option(help="Duration clip in frames.")] = None,
    cohort: Annotated[Path | None, typer.Option()] = None,
    cohort_embeddings: Annotated[Path | None, typer.Option()] = None,
    energies: Annotated[
        Path | None, typer.Option(help="utt_id e1 ... eT lines.")
    ] = None,
    vad_threshold_db: Annotated[float, typer.Option()] = 30.0,
) -> None:
    """Per-trial quality features."""

    state = _state(ctx)
    try:
        config = _qmf_config(enable, combine, clip)
        store = load_embeddings(embeddings)
        if energies is not None:
            store = fill_speech_frames(
                store, load_frame_energies(energies), vad_threshold_db
            )
        needs_cohort = "imposter_mean" in {kind.value for kind in config.enabled}
        resolved = _cohort_from(cohort, cohort_embeddings) if needs_cohort else None
        trial_list = load_trials(trials)
        matrix = assemble_quality_matrix(trial_list, store, resolved, config)
        save_quality(matrix, trial_list, output)
    except _HANDLED_ERRORS as exc:
        raise _fail(exc) from exc
    state.report(
        {
            "command": "qmf",
            "features": config.feature_names(),
            "trials": len(trial_list),
        }
    )


@app.command("calibrate-fit")
def calibrate_fit(  # noqa: PLR0913 - mirrors the calibration inputs
    ctx: typer.Context,
    scores: Annotated[Path, typer.Option(exists=True, dir_okay=False)],
    labels_from_trials: Annotated[Path, typer.Option(exists=True, dir_okay=False)],
    output: Annotated[Path, typer.Option("--output", "-o")],
    qmf_file: Annotated[Path | None, typer.Option("--qmf")] = None,
    enable: Annotated[
        str, typer.Option(help="QMF kinds the --qmf file holds.")
    ] = "duration",
    combine: Annotated[str, typer.Option()] = CombineMode.MIN_MAX.value,
    clip: Annotated[int | None, typer.Option()] = None,
    prior: Annotated[float, typer.Option()] = 0.05,
) -> None:
    """Fit the quality-aware calibration on labeled calibration trials."""

    state = _state(ctx)
    try:
        trial_list, score_set = load_scores(scores)
        labels = _labels_for(trial_list, load_trials(labels_from_trials))
        quality = None
        qmf_config = None
        if qmf_file is not None:
            qmf_config = _qmf_config(enable, combine, clip)
            quality = load_quality(qmf_file)[1]
            check_quality_alignment(score_set, quality, trial_list)
        model = fit(
            _score_column(score_set),
            quality,
            labels,
            prior,
            qmf_config=qmf_config,
        )
        save_model(model, output)
    except _HANDLED_ERRORS as exc:
        raise _fail(exc) from exc
    state.report({"command": "calibrate-fit", "model": model.to_payload()})


@app.command("calibrate-apply")
def calibrate_apply(
    ctx: typer.Context,
    model: Annotated[Path, typer.Option(exists=True, dir_okay=False)],
    scores: Annotated[Path, typer.Option(exists=True, dir_okay=False)],
    output: Annotated[Path, typer.Option("--output", "-o")],
    qmf_file: Annotated[Path | None, typer.Option("--qmf")] = None,
) -> None:
    """Write calibrated LLRs as the third score column."""

    state = _state(ctx)
    try:
        calibration = load_model(model)
        trial_list, score_set = load_scores(scores)
        quality = load_quality(qmf_file)[1] if qmf_file is not None else None
        if quality is not None:
            check_quality_alignment(score_set, quality, trial_list)
        llr = calibration.apply_batch(_score_column(score_set), quality)
        save_scores(score_set.with_llr(llr), trial_list, output)
    except _HANDLED_ERRORS as exc:
        raise _fail(exc) from exc
    state.report({"command": "calibrate-apply", "trials": len(trial_list)})


@app.command("fuse")
def fuse_command(
    ctx: typer.Context,
    score_files: Annotated[list[Path], typer.Argument(exists=True, dir_okay=False)],
    output: Annotated[Path, typer.Option("--output", "-o")],
    weights: Annotated[str | None, typer.Option(help="Comma-separated, sum 1.")] = None,
    fit_trials: Annotated[
        Path | None, typer.Option(help="Labeled trials for a fitted fusion.")
    ] = None,
    prior: Annotated[float, typer.Option()] = 0.05,
) -> None:
    """Fuse calibrated systems by weighted average or a fitted linear fusion."""

    state = _state(ctx)
    try:
        loaded = [load_scores(path) for path in score_files]
        trial_list = loaded[0][0]
        for other, _ in loaded[1:]:
            if [(t.enroll_id, t.test_id) for t in other] != [
                (t.enroll_id, t.test_id) for t in trial_list
            ]:
                msg = "fused score files must list the same trials in the same order"
                raise ValueError(msg)
        matrix = np.column_stack([scores.best() for _, scores in loaded])
        if fit_trials is not None:
            labels = _labels_for(trial_list, load_trials(fit_trials))
            fused = fit_fusion(matrix, labels, prior).apply(matrix)
        else:
            weight_text = weights or ",".join(["1"] * len(loaded))
            parsed = [float(part) for part in weight_text.split(",")]
            if weights is None:
                parsed = [value / len(parsed) for value in parsed]
            fused = np.asarray(fuse(matrix, parsed), dtype=np.float64)
        save_scores(ScoreSet(fused, llr=fused), trial_list, output)
    except _HANDLED_ERRORS as exc:
        raise _fail(exc) from exc
    state.report({"command": "fuse", "systems": len(loaded), "trials": len(trial_list)})


@app.command()
def evaluate(  # noqa: PLR0913 - one option per cost parameter
    ctx: typer.Context,
    scores: Annotated[Path, typer.Option(exists=True, dir_okay=False)],
    trials: Annotated[Path, typer.Option(exists=True, dir_okay=False)],
    p_target: Annotated[float, typer.Option()] = 0.01,
    c_miss: Annotated[float, typer.Option()] = 1.0,
    c_fa: Annotated[float, typer.Option()] = 1.0,
    use_llr: Annotated[bool, typer.Option("--use-llr")] = False,
) -> None:
    """Print ``EER(%) minDCF [actDCF Cllr]``."""

    state = _state(ctx)
    try:
        trial_list, score_set = load_scores(scores)
        labels = _labels_for(trial_list, load_trials(trials))
        if use_llr and score_set.llr is None:
            msg = "--use-llr needs a score file with an llr column"
            raise ValueError(msg)
        values = score_set.llr if use_llr else _score_column(score_set)
        row = evaluate_scores(
            values,
            labels,
            (DcfParams(p_target, c_miss, c_fa),),
            use_llr=use_llr,
            name=scores.name,
        )
    except _HANDLED_ERRORS as exc:
        raise _fail(exc) from exc
    typer.echo(format_metric_line(row))
    state.report({"command": "evaluate", "metrics": row.to_payload()})


@app.command()
def simulate(  # noqa: PLR0913 - one option per population knob
    ctx: typer.Context,
    output: Annotated[Path, typer.Option("--output", "-o", file_okay=False)],
    speakers: Annotated[int, typer.Option()] = 200,
    dim: Annotated[int, typer.Option()] = 64,
    trials_per_type: Annotated[int, typer.Option()] = 1000,
    utterances_per_speaker: Annotated[int, typer.Option()] = 8,
    cohort_speakers: Annotated[int, typer.Option()] = 150,
    noise_base: Annotated[float, typer.Option()] = 0.25,
    exponent: Annotated[float, typer.Option()] = 0.5,
    frame_speakers: Annotated[int, typer.Option(help="Also write a frame corpus.")] = 0,
) -> None:
    """Write a synthetic evaluation set, cohort population and optional frames."""

    state = _state(ctx)
    try:
        config = SimConfig(
            n_speakers=speakers,
            dim=dim,
            seed=state.seed,
            utterances_per_speaker=utterances_per_speaker,
            cohort_speakers=cohort_speakers,
            noise_base=noise_base,
            noise_duration_exponent=exponent,
        )
        files = write_simulation(
            config,
            CalibrationTrialSpec(trials_per_type=trials_per_type),
            output,
            frame_speakers=frame_speakers,
        )
    except _HANDLED_ERRORS as exc:
        raise _fail(exc) from exc
    typer.echo(f"embeddings: {files.embeddings}")
    typer.echo(f"trials: {files.trials}")
    typer.echo(f"cohort embeddings: {files.cohort_embeddings}")
    if files.frames is not None:
        typer.echo(f"frames: {files.frames}")
    state.report({"command": "simulate", "config": config.to_payload()})


@app.command("train-toy")
def train_toy_command(
    ctx: typer.Context,
    plan: Annotated[Path, typer.Option(exists=True, dir_okay=False)],
    data: Annotated[Path, typer.Option(exists=True, dir_okay=False)],
    output: Annotated[Path, typer.Option("--output", "-o", file_okay=False)],
    embedding_dim: Annotated[int, typer.Option()] = 16,
) -> None:
    """Train the toy extractor with a staged large-margin plan."""

    state = _state(ctx)
    try:
        train_plan = load_train_plan(plan)
        corpus = load_frame_corpus(data)
        model = train_toy(
            train_plan,
            corpus,
            state.seed,
            embedding_dim=embedding_dim,
            log_path=output / "train.log",
        )
        save_toy_model(model, output)
    except _HANDLED_ERRORS as exc:
        raise _fail(exc) from exc
    final = model.history[-1] if model.history else None
    typer.echo(f"trained {model.stages_completed} stage(s); model in {output}")
    state.report(
        {
            "command": "train-toy",
            "stages": model.stages_completed,
            "final_loss": final.loss if final else None,
        }
    )


@app.command()
def run(
    ctx: typer.Context,
    config: Annotated[Path, typer.Option(exists=True, dir_okay=False)],
) -> None:
    """Full pipeline from a JSON config; prints the report table."""

    state = _state(ctx)
    try:
        pipeline_config = load_pipeline_config(config)
        if state.seed_given:
            pipeline_config = replace(pipeline_config, seed=state.seed)
        if state.report_json is not None:
            pipeline_config = replace(pipeline_config, report_json=state.report_json)
        XClsMakeSpeakerBackendX(pipeline_config, workers=state.threads).run()
    except _HANDLED_ERRORS as exc:
        raise _fail(exc) from exc


def main() -> None:
    app()


__all__ = ["CliState", "app", "main"]
