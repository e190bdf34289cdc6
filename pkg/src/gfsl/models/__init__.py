from .batchbased import adapt_head, batch_loss_and_grad, batch_train_epoch, batchbased_predict_episode, batches
from .checkpoint import load_checkpoint, save_checkpoint
from .nn import (
    DimensionError,
    EncoderParams,
    HeadParams,
    bce_loss,
    bce_with_logits,
    encode,
    encoder_backward,
    encoder_forward,
    head_backward,
    head_logits,
    head_predict,
    init_encoder,
    init_head,
    sigmoid,
)
from .optim import OptimizerState
from .protonet import (
    PrototypeSet,
    TrainingError,
    compute_prototypes,
    episode_loss_and_grad,
    protonet_episode_loss,
    protonet_loss_and_grad,
    protonet_predict_episode,
    protonet_scores,
    protonet_train_step,
    prototypes_from_embeddings,
)
