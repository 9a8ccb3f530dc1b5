"""
The `twostream` command line.

Subcommands cover data generation, the three training stages, evaluation,
the ablation suite, attention export and the gradient suite. Failures print
one JSON line {"error": <category>, "detail": <text>} on stderr and exit
with 3 for missing inputs or 4 for validation failures.
"""
import json
import logging
import sys

from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import click
import numpy as np

from twostream.ablation import ablation_suite
from twostream.checkpoint import (
    COLLAB_FILE,
    STREAM_FILES,
    load_collab_model,
    load_stream_model,
    save_collab_model,
    save_stream_model,
)
from twostream.cli_options import config_options
from twostream.collaborative import StreamFeatures
from twostream.common import STREAMS, Dataset, VideoSample
from twostream.config import TrainConfig
from twostream.errors import (
    BadConfigError,
    GradientCheckError,
    NoTestDataError,
    TwostreamError,
)
from twostream.fusion import FusionWeights
from twostream.gradcheck import failures, run_gradient_suite
from twostream.manifest import load_dataset, save_dataset
from twostream.pipeline import TwoStreamModel, evaluate, select_lambda
from twostream.stream import StreamModel
from twostream.synthetic import SyntheticConfig, generate_synthetic
from twostream.tensor import Tensor, no_grad
from twostream.training import frozen_segments, train_collaborative, train_stream

logger = logging.getLogger(__name__)

TRAINING_GROUP = 'Training configuration'
TRAIN_RENAMES = {'lam': 'lambda'}


class TwostreamGroup(click.Group):
    def invoke(self, ctx: click.Context) -> Any:
        try:
            return super().invoke(ctx)
        except TwostreamError as e:
            click.echo(json.dumps({'error': e.category, 'detail': e.detail}), err=True)
            ctx.exit(e.exit_code)


def write_json(path: Path | str, payload: dict[str, Any]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + '\n')


def write_report(path: Path | str, payload: dict[str, Any], config: Any) -> None:
    """Echo the effective config and, unless disabled, a timestamp."""
    ctx = click.get_current_context()
    report = dict(payload)
    report['config'] = config.to_dict()
    if ctx.find_root().obj.get('timestamp', True):
        report['timestamp'] = datetime.now(timezone.utc).isoformat()
    write_json(path, report)


def load_models(checkpoints: Path | str) -> TwoStreamModel:
    checkpoints = Path(checkpoints)
    static = load_stream_model(checkpoints / STREAM_FILES['static'])
    motion = load_stream_model(checkpoints / STREAM_FILES['motion'])
    model = TwoStreamModel(static, motion)
    if (checkpoints / COLLAB_FILE).is_file():
        model.collab = load_collab_model(checkpoints / COLLAB_FILE)
    return model


def untrained_models(dataset: Dataset, cfg: TrainConfig) -> TwoStreamModel:
    """Freshly initialized streams sized from the dataset's first video."""
    rng = np.random.default_rng(cfg.seed)
    channels = (dataset.train or dataset.test)[0].channels
    return TwoStreamModel(
        StreamModel.initialize(rng, 'static', channels, dataset.num_classes, cfg),
        StreamModel.initialize(rng, 'motion', channels, dataset.num_classes, cfg),
    )


@click.group(cls=TwostreamGroup)
@click.option('--debug', is_flag=True, default=False, help='Print debug logs.')
@click.option(
    '--no-timestamp', is_flag=True, default=False,
    help='Leave timestamps out of written reports.',
)
@click.pass_context
def twostream(ctx: click.Context, debug: bool, no_timestamp: bool) -> None:
    """Two-stream spatial-temporal attention with collaborative learning."""
    logging.basicConfig(
        level=logging.DEBUG if debug else logging.WARNING,
        format='%(asctime)s %(name)s %(levelname)s %(message)s',
        stream=sys.stderr,
    )
    ctx.ensure_object(dict)
    ctx.obj['timestamp'] = not no_timestamp


data_option = click.option(
    '--data', type=click.Path(dir_okay=False), required=True, help='Dataset manifest JSON.'
)
checkpoints_option = click.option(
    '--checkpoints', type=click.Path(file_okay=False), required=True,
    help='Directory holding static.tclm, motion.tclm and optionally collab.tclm.',
)


@twostream.command('gen-data')
@click.option('--out-dir', type=click.Path(file_okay=False), required=True)
@config_options(SyntheticConfig, 'Synthetic data configuration')
def gen_data(out_dir: str, cfg: SyntheticConfig) -> None:
    """Write a synthetic dataset as FVS files plus a manifest."""
    dataset = generate_synthetic(cfg)
    manifest = save_dataset(out_dir, dataset, {'synthetic': cfg.to_dict()})
    click.echo(str(manifest))


@twostream.command()
@data_option
@click.option(
    '--stream', type=click.Choice(['static', 'motion', 'both']), default='both',
    show_default=True,
)
@click.option('--out', type=click.Path(file_okay=False), required=True)
@config_options(TrainConfig, TRAINING_GROUP, renames=TRAIN_RENAMES)
def train(data: str, stream: str, out: str, cfg: TrainConfig) -> None:
    """Stage 1: train the spatial-temporal attention network of each stream."""
    dataset = load_dataset(data)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    histories = {}
    for tag in STREAMS if stream == 'both' else (stream,):
        model, history = train_stream(
            dataset.train, tag, cfg, dataset.num_classes, dataset.val
        )
        save_stream_model(out_dir / STREAM_FILES[tag], model)
        histories[tag] = history.to_dict()
    write_report(out_dir / 'train_report.json', {'histories': histories}, cfg)


@twostream.command()
@data_option
@checkpoints_option
@click.option('--out', type=click.Path(dir_okay=False), default=None,
              help='Collaborative checkpoint path [default: CHECKPOINTS/collab.tclm].')
@config_options(TrainConfig, TRAINING_GROUP, renames=TRAIN_RENAMES)
def collab(data: str, checkpoints: str, out: str | None, cfg: TrainConfig) -> None:
    """Stage 2: train the collaborative network over the trained streams."""
    dataset = load_dataset(data)
    static = load_stream_model(Path(checkpoints) / STREAM_FILES['static'])
    motion = load_stream_model(Path(checkpoints) / STREAM_FILES['motion'])
    model, history = train_collaborative(
        dataset.train, static, motion, cfg, dataset.num_classes, dataset.val
    )
    out_path = Path(out) if out else Path(checkpoints) / COLLAB_FILE
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_collab_model(out_path, model)
    if cfg.finetune_streams:
        save_stream_model(out_path.parent / STREAM_FILES['static'], static)
        save_stream_model(out_path.parent / STREAM_FILES['motion'], motion)
    write_report(
        out_path.with_suffix('.json'), {'histories': {'collab': history.to_dict()}}, cfg
    )


@twostream.command()
@data_option
@checkpoints_option
@click.option('--out', type=click.Path(dir_okay=False), required=True)
@click.option(
    '--lambda-grid', type=float, multiple=True,
    help='Candidate lambda, repeatable; the one fusing the validation split best is kept.',
)
@config_options(TrainConfig, TRAINING_GROUP, renames=TRAIN_RENAMES)
def fuse(
    data: str, checkpoints: str, out: str, lambda_grid: tuple[float, ...], cfg: TrainConfig
) -> None:
    """Stage 3: learn per-category fusion weights on training-set scores."""
    dataset = load_dataset(data)
    weights = select_lambda(
        load_models(checkpoints), dataset.train, dataset.val, lambda_grid, cfg
    )
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    weights.save(out)


@twostream.command('eval')
@data_option
@click.option('--checkpoints', type=click.Path(file_okay=False), default=None,
              help='Trained models; freshly initialized ones when omitted.')
@click.option('--weights', type=click.Path(dir_okay=False), default=None,
              help='Fusion weights JSON; late fusion when omitted.')
@click.option('--report', type=click.Path(dir_okay=False), required=True)
@click.option('--workers', type=click.IntRange(min=1), default=1, show_default=True)
@config_options(TrainConfig, TRAINING_GROUP, renames=TRAIN_RENAMES)
def eval_(
    data: str,
    checkpoints: str | None,
    weights: str | None,
    report: str,
    workers: int,
    cfg: TrainConfig,
) -> None:
    """Accuracy, confusion matrix and MAP of the fused test-set scores."""
    dataset = load_dataset(data)
    if not dataset.test:
        raise NoTestDataError(f'{data} has no test videos')
    model = load_models(checkpoints) if checkpoints else untrained_models(dataset, cfg)
    fusion = FusionWeights.load(weights) if weights else None
    result = evaluate(dataset.test, model, fusion, workers)
    payload = result.to_dict()
    payload['trained'] = checkpoints is not None
    payload['collaborative'] = model.collab is not None
    payload['fusion'] = 'adaptive' if fusion else 'late'
    write_report(report, payload, cfg)
    click.echo(json.dumps({'accuracy': result.accuracy, 'map': result.map_score}))


@twostream.command()
@data_option
@click.option('--out', type=click.Path(file_okay=False), required=True)
@config_options(TrainConfig, TRAINING_GROUP, renames=TRAIN_RENAMES)
def ablate(data: str, out: str, cfg: TrainConfig) -> None:
    """Attention, collaboration and fusion ablations as JSON and a text table."""
    dataset = load_dataset(data)
    table = ablation_suite(dataset, cfg)
    out_dir = Path(out)
    write_report(out_dir / 'ablation.json', table.to_dict(), cfg)
    (out_dir / 'ablation.txt').write_text(table.to_text())
    click.echo(table.to_text())


def to_pgm(values: np.ndarray, peak: float) -> str:
    """Plain (P2) PGM with 255 at `peak`."""
    h, w = values.shape
    scaled = np.zeros_like(values) if peak <= 0 else values / peak
    pixels = np.clip(np.rint(scaled * 255), 0, 255).astype(int)
    rows = [' '.join(str(v) for v in row) for row in pixels]
    return '\n'.join(['P2', f'{w} {h}', '255', *rows]) + '\n'


def attention_export(model: TwoStreamModel, sample: VideoSample) -> dict[str, Any]:
    """Inference-mode spatial maps and temporal weights of one video."""
    export: dict[str, Any] = {'video_id': sample.id, 'label': sample.label, 'streams': {}}
    with no_grad():
        for stream_model in (model.static, model.motion):
            frames = Tensor(sample.frames(stream_model.stream_tag)[np.newaxis])
            output = stream_model.forward(frames)
            export['streams'][stream_model.stream_tag] = {
                'spatial': output.attention.values.data[0].tolist(),
                'gamma': output.attended.attention.gamma.data[0].tolist(),
                'weights': output.attended.attention.weights.data[0].tolist(),
                'prediction': int(np.argmax(output.scores.data[0])),
            }
    export['planted_frames'] = list(sample.planted_frames)
    export['planted_cells'] = list(sample.planted_cells)
    if model.collab is not None:
        V_s, V_m = frozen_segments(model.static, model.motion, [sample], model.collab.segments)
        with no_grad():
            state, _, _ = model.collab.forward(
                StreamFeatures(Tensor(V_s), 'static'), StreamFeatures(Tensor(V_m), 'motion')
            )
        export['collaborative'] = {
            'z_static': state.z_s.data[0].tolist(),
            'z_motion': state.z_m.data[0].tolist(),
            'rounds': int(state.video_rounds[0]),
        }
    return export


@twostream.command('export-attention')
@data_option
@checkpoints_option
@click.option('--video-id', required=True)
@click.option('--out', type=click.Path(file_okay=False), required=True)
def export_attention(data: str, checkpoints: str, video_id: str, out: str) -> None:
    """Per-frame spatial maps (JSON and PGM) and temporal weights of one video."""
    dataset = load_dataset(data)
    sample = dataset.find(video_id)
    if sample is None:
        raise BadConfigError(f'no video {video_id!r} in {data}')
    export = attention_export(load_models(checkpoints), sample)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for tag, stream in export['streams'].items():
        maps = np.asarray(stream['spatial'])
        peak = float(maps.max())
        for t, frame in enumerate(maps):
            (out_dir / f'{video_id}_{tag}_{t:03d}.pgm').write_text(to_pgm(frame, peak))
    write_json(out_dir / f'{video_id}_attention.json', export)


@twostream.command()
@click.option('--seed', type=int, default=1, show_default=True)
def gradcheck(seed: int) -> None:
    """Finite-difference check of every primitive and composed chain."""
    results = run_gradient_suite(seed)
    click.echo(json.dumps(results, indent=2))
    failed = failures(results)
    if failed:
        raise GradientCheckError(', '.join(failed))
