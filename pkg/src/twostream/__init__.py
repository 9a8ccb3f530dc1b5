from twostream.collaborative import CollabModel as CollabModel
from twostream.common import Dataset as Dataset, VideoSample as VideoSample
from twostream.config import TrainConfig as TrainConfig
from twostream.errors import TwostreamError as TwostreamError
from twostream.fusion import FusionWeights as FusionWeights, learn_weights as learn_weights
from twostream.metrics import EvalReport as EvalReport
from twostream.pipeline import (
    TwoStreamModel as TwoStreamModel,
    evaluate as evaluate,
    train_pipeline as train_pipeline,
)
from twostream.stream import StreamModel as StreamModel
from twostream.synthetic import (
    SyntheticConfig as SyntheticConfig,
    generate_synthetic as generate_synthetic,
)
