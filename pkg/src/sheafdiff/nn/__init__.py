from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (
    Affine,
    Mlp,
    MlpSpec,
    encode_input,
    jdsnn_layer,
    mlp_restriction_maps,
    risnn_restriction_update,
    snn_layer,
)
from .models import (
    JOINT_VARIANTS,
    SHEAF_VARIANTS,
    VARIANTS,
    GraphData,
    ModelConfig,
    ParamCount,
    build_model,
    counted_parameters,
    param_count,
    preset,
)
from .train import (
    TrainConfig,
    TrainingDivergence,
    TrainResult,
    finite_difference_check,
    loss_and_gradients,
    train,
)
