from .gradcheck import finite_difference_check
from .layers import (
    dense,
    gather_cols,
    graphormer_layer,
    layer_norm,
    masked_softmax,
    mean_pool,
    mlp,
    mp_layer,
    segment_softmax,
)
from .params import (
    CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
    ParamStore,
    glorot,
    load_checkpoint,
    save_checkpoint,
)
from .tensor import (
    Tape,
    Tensor,
    active_tape,
    backward,
    clamp,
    concat,
    constant,
    default_dtype,
    embedding,
    exp,
    gather_rows,
    gelu,
    leaky_relu,
    log,
    matmul,
    minimum,
    relu,
    reshape,
    rowmax_const,
    segment_sum,
    set_default_dtype,
    sigmoid,
    spmm,
    sqrt,
    square,
    tanh,
    tmean,
    transpose,
    tsum,
)
