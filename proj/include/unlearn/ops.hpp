#pragma once

#include <vector>

#include "unlearn/tensor.hpp"

namespace unlearn {

// Differentiable free functions over Tensor. When a GraphScope is active the
// result is recorded on the tape; otherwise only values are computed and the
// result does not require gradients (inference mode).

// Matrix product of 2-D tensors [m x k] . [k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);

// 2-D transpose.
Tensor transpose(const Tensor& a);

// Valid (no padding) cross-correlation. Input is [C x H x W] or
// [B x C x H x W], kernels are [F x C x kh x kw]; output spatial dims are
// floor((H - kh) / stride) + 1 and likewise for W.
Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride = 1);

// Max pooling over square windows; stride defaults to the window size.
Tensor max_pool2d(const Tensor& input, int window, int stride = 0);

Tensor relu(const Tensor& a);

// Softmax / log-softmax over the final axis, max-subtraction stable form.
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);

// Reductions to a rank-0 scalar.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Elementwise add of equal shapes, or broadcast add of a rank-1 tensor
// along the final axis of a higher-rank tensor (bias add).
Tensor add(const Tensor& a, const Tensor& b);

// Elementwise product of equal shapes.
Tensor mul(const Tensor& a, const Tensor& b);

// Multiplication by a compile-time-constant scalar.
Tensor scale(const Tensor& a, double factor);

// Collapses all axes but the first; rank-0/1 tensors pass through.
Tensor flatten(const Tensor& a);

// Picks element index[b] from each row of a 2-D tensor -> rank-1 [B].
Tensor gather(const Tensor& a, const std::vector<int>& index);

// Elementwise max(a, floor_value).
Tensor clamp_min(const Tensor& a, double floor_value);

// Identity forward; backward multiplies the upstream gradient by
// -reversal_scale before it continues below this node.
Tensor grad_reverse(const Tensor& a, double reversal_scale);

// Copy that shares no graph history: gradients never flow past it.
Tensor detach(const Tensor& a);

} // namespace unlearn
