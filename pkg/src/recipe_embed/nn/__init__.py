from recipe_embed.nn.tensor import (
    Param,
    Tensor,
    add,
    as_tensor,
    binary_cross_entropy_with_logits,
    blend,
    concat,
    cosine_similarity,
    embedding,
    linear,
    matmul,
    mul,
    no_grad,
    relu,
    scale,
    sigmoid,
    softmax_cross_entropy,
    stack,
    tanh,
)
from recipe_embed.nn.layers import (
    LSTMCell,
    encode_sequence,
    lstm_step,
    pad_sequences,
    run_bilstm,
    run_bilstm_all,
    run_lstm,
)
from recipe_embed.nn.optim import SGD, Adam, make_optimizer
from recipe_embed.nn.checkpoint import load_into, read_checkpoint, save_checkpoint
from recipe_embed.nn.gradcheck import check_gradients, numerical_grad, relative_error


def forward_linear(x, W, b):
    return linear(x, W, b)


def cosine(a, b):
    return cosine_similarity(a, b)
