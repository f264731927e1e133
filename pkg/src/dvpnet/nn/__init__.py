from .tensor import (Parameter, Tensor, backward, default_dtype, get_default_dtype,
                     no_grad, set_default_dtype)
from .ops import (ShapeError, add, batch_norm, bce_with_logits, concat_channels, conv2d,
                  depthwise_conv3x3, index, line_deviation, mse, mul, relu6, reshape, scale,
                  sigmoid_act, sub, sum_all, upsample2x_nearest)
from .optim import SGD, MissingGradError, sgd_momentum_step
