#include "unlearn/ops.hpp"

#include <cmath>
#include <utility>

namespace unlearn {

namespace {

using Eigen::ArrayXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

Tensor make_op(const char* op, const std::vector<Tensor>& inputs, Shape shape, ArrayXd values,
               BackwardFn fn) {
    Graph* g = Graph::active();
    if (g == nullptr) return Tensor(std::move(shape), std::move(values));
    return g->record(op, inputs, std::move(shape), std::move(values), std::move(fn));
}

// Patch matrix of one image: row per output position, column per
// (channel, ky, kx) kernel element.
void im2col(const double* img, int C, int H, int W, int kh, int kw, int stride, int H2, int W2,
            RowMat& cols) {
    cols.resize(static_cast<Eigen::Index>(H2) * W2, static_cast<Eigen::Index>(C) * kh * kw);
    for (int oy = 0; oy < H2; ++oy) {
        for (int ox = 0; ox < W2; ++ox) {
            const Eigen::Index row = static_cast<Eigen::Index>(oy) * W2 + ox;
            Eigen::Index col = 0;
            for (int c = 0; c < C; ++c) {
                const double* plane = img + static_cast<std::ptrdiff_t>(c) * H * W;
                for (int dy = 0; dy < kh; ++dy) {
                    const double* src = plane + static_cast<std::ptrdiff_t>(oy * stride + dy) * W + ox * stride;
                    for (int dx = 0; dx < kw; ++dx) {
                        cols(row, col++) = src[dx];
                    }
                }
            }
        }
    }
}

void col2im_add(const RowMat& cols, int C, int H, int W, int kh, int kw, int stride, int H2, int W2,
                double* grad_img) {
    for (int oy = 0; oy < H2; ++oy) {
        for (int ox = 0; ox < W2; ++ox) {
            const Eigen::Index row = static_cast<Eigen::Index>(oy) * W2 + ox;
            Eigen::Index col = 0;
            for (int c = 0; c < C; ++c) {
                double* plane = grad_img + static_cast<std::ptrdiff_t>(c) * H * W;
                for (int dy = 0; dy < kh; ++dy) {
                    double* dst = plane + static_cast<std::ptrdiff_t>(oy * stride + dy) * W + ox * stride;
                    for (int dx = 0; dx < kw; ++dx) {
                        dst[dx] += cols(row, col++);
                    }
                }
            }
        }
    }
}

// Final-axis layout shared by softmax/log_softmax.
std::pair<Eigen::Index, Eigen::Index> row_layout(const Tensor& a, const char* op) {
    if (a.rank() < 1) {
        throw DimensionError(std::string(op) + " requires at least one axis, got " + shape_str(a.shape()));
    }
    const Eigen::Index last = a.shape().back();
    return {a.size() / last, last};
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw DimensionError("matmul requires 2-D tensors, got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (k != b.dim(0)) {
        throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    ConstMatMap A(a.values().data(), m, k);
    ConstMatMap B(b.values().data(), k, n);
    ArrayXd out(static_cast<Eigen::Index>(m) * n);
    MatMap C(out.data(), m, n);
    C.noalias() = A * B;
    BackwardFn fn = [a, b, m, k, n](const ArrayXd& up, const std::vector<ArrayXd*>& adj) {
        ConstMatMap U(up.data(), m, n);
        ConstMatMap Av(a.values().data(), m, k);
        ConstMatMap Bv(b.values().data(), k, n);
        MatMap GA(adj[0]->data(), m, k);
        MatMap GB(adj[1]->data(), k, n);
        GA.noalias() += U * Bv.transpose();
        GB.noalias() += Av.transpose() * U;
    };
    return make_op("matmul", {a, b}, Shape{m, n}, std::move(out), std::move(fn));
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) {
        throw DimensionError("transpose requires a 2-D tensor, got " + shape_str(a.shape()));
    }
    const int m = a.dim(0), n = a.dim(1);
    ConstMatMap A(a.values().data(), m, n);
    ArrayXd out(a.size());
    MatMap T(out.data(), n, m);
    T = A.transpose();
    BackwardFn fn = [m, n](const ArrayXd& up, const std::vector<ArrayXd*>& adj) {
        ConstMatMap U(up.data(), n, m);
        MatMap G(adj[0]->data(), m, n);
        G += U.transpose();
    };
    return make_op("transpose", {a}, Shape{n, m}, std::move(out), std::move(fn));
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride) {
    if (input.rank() != 3 && input.rank() != 4) {
        throw DimensionError("conv2d input must be [CxHxW] or [BxCxHxW], got " + shape_str(input.shape()));
    }
    if (kernels.rank() != 4) {
        throw DimensionError("conv2d kernels must be [FxCxkhxkw], got " + shape_str(kernels.shape()));
    }
    if (stride < 1) throw ContractError("conv2d stride must be positive");
    const bool batched = input.rank() == 4;
    const int B = batched ? input.dim(0) : 1;
    const int C = input.dim(batched ? 1 : 0);
    const int H = input.dim(batched ? 2 : 1);
    const int W = input.dim(batched ? 3 : 2);
    const int F = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
    if (kernels.dim(1) != C) {
        throw DimensionError("conv2d channel mismatch: input " + shape_str(input.shape()) + " vs kernels " +
                             shape_str(kernels.shape()));
    }
    if (kh > H || kw > W) {
        throw DimensionError("conv2d kernel larger than input: " + shape_str(kernels.shape()) + " on " +
                             shape_str(input.shape()));
    }
    const int H2 = (H - kh) / stride + 1;
    const int W2 = (W - kw) / stride + 1;
    const Eigen::Index plane = static_cast<Eigen::Index>(H2) * W2;
    const Eigen::Index img_in = static_cast<Eigen::Index>(C) * H * W;
    const Eigen::Index img_out = static_cast<Eigen::Index>(F) * plane;

    ConstMatMap K(kernels.values().data(), F, static_cast<Eigen::Index>(C) * kh * kw);
    ArrayXd out(static_cast<Eigen::Index>(B) * img_out);
    RowMat cols;
    for (int b = 0; b < B; ++b) {
        im2col(input.values().data() + b * img_in, C, H, W, kh, kw, stride, H2, W2, cols);
        MatMap O(out.data() + b * img_out, F, plane);
        O.noalias() = K * cols.transpose();
    }

    Shape out_shape = batched ? Shape{B, F, H2, W2} : Shape{F, H2, W2};
    BackwardFn fn = [input, kernels, B, C, H, W, F, kh, kw, stride, H2, W2, plane, img_in,
                     img_out](const ArrayXd& up, const std::vector<ArrayXd*>& adj) {
        ConstMatMap Kv(kernels.values().data(), F, static_cast<Eigen::Index>(C) * kh * kw);
        MatMap GK(adj[1]->data(), F, static_cast<Eigen::Index>(C) * kh * kw);
        RowMat cols, gcols;
        for (int b = 0; b < B; ++b) {
            im2col(input.values().data() + b * img_in, C, H, W, kh, kw, stride, H2, W2, cols);
            ConstMatMap U(up.data() + b * img_out, F, plane);
            GK.noalias() += U * cols;
            gcols.noalias() = U.transpose() * Kv;
            col2im_add(gcols, C, H, W, kh, kw, stride, H2, W2, adj[0]->data() + b * img_in);
        }
    };
    return make_op("conv2d", {input, kernels}, std::move(out_shape), std::move(out), std::move(fn));
}

Tensor max_pool2d(const Tensor& input, int window, int stride) {
    if (input.rank() != 3 && input.rank() != 4) {
        throw DimensionError("max_pool2d input must be [CxHxW] or [BxCxHxW], got " + shape_str(input.shape()));
    }
    if (window < 1) throw ContractError("max_pool2d window must be positive");
    if (stride == 0) stride = window;
    if (stride < 1) throw ContractError("max_pool2d stride must be positive");
    const bool batched = input.rank() == 4;
    const int planes = batched ? input.dim(0) * input.dim(1) : input.dim(0);
    const int H = input.dim(batched ? 2 : 1);
    const int W = input.dim(batched ? 3 : 2);
    if (window > H || window > W) {
        throw DimensionError("max_pool2d window exceeds input " + shape_str(input.shape()));
    }
    const int H2 = (H - window) / stride + 1;
    const int W2 = (W - window) / stride + 1;

    const double* in = input.values().data();
    ArrayXd out(static_cast<Eigen::Index>(planes) * H2 * W2);
    auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(out.size()));
    Eigen::Index o = 0;
    for (int p = 0; p < planes; ++p) {
        const double* src = in + static_cast<std::ptrdiff_t>(p) * H * W;
        for (int oy = 0; oy < H2; ++oy) {
            for (int ox = 0; ox < W2; ++ox) {
                double best = src[(oy * stride) * W + ox * stride];
                std::int64_t best_idx = static_cast<std::int64_t>(p) * H * W + (oy * stride) * W + ox * stride;
                for (int dy = 0; dy < window; ++dy) {
                    for (int dx = 0; dx < window; ++dx) {
                        const int y = oy * stride + dy, x = ox * stride + dx;
                        const double v = src[y * W + x];
                        if (v > best) {
                            best = v;
                            best_idx = static_cast<std::int64_t>(p) * H * W + y * W + x;
                        }
                    }
                }
                out[o] = best;
                (*argmax)[static_cast<std::size_t>(o)] = best_idx;
                ++o;
            }
        }
    }

    Shape out_shape = batched ? Shape{input.dim(0), input.dim(1), H2, W2} : Shape{input.dim(0), H2, W2};
    BackwardFn fn = [argmax](const ArrayXd& up, const std::vector<ArrayXd*>& adj) {
        ArrayXd& g = *adj[0];
        for (Eigen::Index i = 0; i < up.size(); ++i) {
            g[(*argmax)[static_cast<std::size_t>(i)]] += up[i];
        }
    };
    return make_op("max_pool2d", {input}, std::move(out_shape), std::move(out), std::move(fn));
}

Tensor relu(const Tensor& a) {
    ArrayXd out = a.values().cwiseMax(0.0);
    BackwardFn fn = [a](const ArrayXd& up, const std::vector<ArrayXd*>& adj) {
        *adj[0] += up * (a.values() > 0.0).cast<double>();
    };
    return make_op("relu", {a}, a.shape(), std::move(out), std::move(fn));
}

Tensor softmax(const Tensor& a) {
    const auto [rows, last] = row_layout(a, "softmax");
    ArrayXd out(a.size());
    for (Eigen::Index r = 0; r < rows; ++r) {
        auto x = a.values().segment(r * last, last);
        auto y = out.segment(r * last, last);
        const double m = x.maxCoeff();
        y = (x - m).exp();
        y /= y.sum();
    }
    ArrayXd saved = out;
    BackwardFn fn = [saved, rows = rows, last = last](const ArrayXd& up, const std::vector<ArrayXd*>& adj) {
        for (Eigen::Index r = 0; r < rows; ++r) {
            auto p = saved.segment(r * last, last);
            auto u = up.segment(r * last, last);
            const double dot = (u * p).sum();
            adj[0]->segment(r * last, last) += p * (u - dot);
        }
    };
    return make_op("softmax", {a}, a.shape(), std::move(out), std::move(fn));
}

Tensor log_softmax(const Tensor& a) {
    const auto [rows, last] = row_layout(a, "log_softmax");
    ArrayXd out(a.size());
    for (Eigen::Index r = 0; r < rows; ++r) {
        auto x = a.values().segment(r * last, last);
        auto y = out.segment(r * last, last);
        const double m = x.maxCoeff();
        y = x - m;
        y -= std::log(y.exp().sum());
    }
    ArrayXd probs = out.exp();
    BackwardFn fn = [probs, rows = rows, last = last](const ArrayXd& up, const std::vector<ArrayXd*>& adj) {
        for (Eigen::Index r = 0; r < rows; ++r) {
            auto p = probs.segment(r * last, last);
            auto u = up.segment(r * last, last);
            adj[0]->segment(r * last, last) += u - p * u.sum();
        }
    };
    return make_op("log_softmax", {a}, a.shape(), std::move(out), std::move(fn));
}

Tensor sum(const Tensor& a) {
    ArrayXd out(1);
    out[0] = a.values().sum();
    BackwardFn fn = [](const ArrayXd& up, const std::vector<ArrayXd*>& adj) { *adj[0] += up[0]; };
    return make_op("sum", {a}, Shape{}, std::move(out), std::move(fn));
}

Tensor mean(const Tensor& a) {
    ArrayXd out(1);
    out[0] = a.values().mean();
    const double inv_n = 1.0 / static_cast<double>(a.size());
    BackwardFn fn = [inv_n](const ArrayXd& up, const std::vector<ArrayXd*>& adj) {
        *adj[0] += up[0] * inv_n;
    };
    return make_op("mean", {a}, Shape{}, std::move(out), std::move(fn));
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) {
        ArrayXd out = a.values() + b.values();
        BackwardFn fn = [](const ArrayXd& up, const std::vector<ArrayXd*>& adj) {
            *adj[0] += up;
            *adj[1] += up;
        };
        return make_op("add", {a, b}, a.shape(), std::move(out), std::move(fn));
    }
    if (a.rank() >= 2 && b.rank() == 1 && b.dim(0) == a.shape().back()) {
        const Eigen::Index last = a.shape().back();
        const Eigen::Index rows = a.size() / last;
        ArrayXd out(a.size());
        for (Eigen::Index r = 0; r < rows; ++r) {
            out.segment(r * last, last) = a.values().segment(r * last, last) + b.values();
        }
        BackwardFn fn = [rows, last](const ArrayXd& up, const std::vector<ArrayXd*>& adj) {
            *adj[0] += up;
            for (Eigen::Index r = 0; r < rows; ++r) {
                *adj[1] += up.segment(r * last, last);
            }
        };
        return make_op("add", {a, b}, a.shape(), std::move(out), std::move(fn));
    }
    throw DimensionError("add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("mul shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    ArrayXd out = a.values() * b.values();
    BackwardFn fn = [a, b](const ArrayXd& up, const std::vector<ArrayXd*>& adj) {
        *adj[0] += up * b.values();
        *adj[1] += up * a.values();
    };
    return make_op("mul", {a, b}, a.shape(), std::move(out), std::move(fn));
}

Tensor scale(const Tensor& a, double factor) {
    ArrayXd out = a.values() * factor;
    BackwardFn fn = [factor](const ArrayXd& up, const std::vector<ArrayXd*>& adj) {
        *adj[0] += up * factor;
    };
    return make_op("scale", {a}, a.shape(), std::move(out), std::move(fn));
}

Tensor flatten(const Tensor& a) {
    Shape out_shape;
    if (a.rank() >= 2) {
        out_shape = Shape{a.dim(0), static_cast<int>(a.size() / a.dim(0))};
    } else {
        out_shape = a.shape();
    }
    ArrayXd out = a.values();
    BackwardFn fn = [](const ArrayXd& up, const std::vector<ArrayXd*>& adj) { *adj[0] += up; };
    return make_op("flatten", {a}, std::move(out_shape), std::move(out), std::move(fn));
}

Tensor gather(const Tensor& a, const std::vector<int>& index) {
    if (a.rank() != 2) {
        throw DimensionError("gather requires a 2-D tensor, got " + shape_str(a.shape()));
    }
    const int rows = a.dim(0), cols = a.dim(1);
    if (static_cast<int>(index.size()) != rows) {
        throw ContractError("gather needs one index per row: " + std::to_string(index.size()) + " for " +
                            std::to_string(rows) + " rows");
    }
    ArrayXd out(rows);
    for (int r = 0; r < rows; ++r) {
        if (index[static_cast<std::size_t>(r)] < 0 || index[static_cast<std::size_t>(r)] >= cols) {
            throw ContractError("gather index out of range: " + std::to_string(index[static_cast<std::size_t>(r)]) +
                                " not in [0, " + std::to_string(cols) + ")");
        }
        out[r] = a.values()[static_cast<Eigen::Index>(r) * cols + index[static_cast<std::size_t>(r)]];
    }
    BackwardFn fn = [index, cols](const ArrayXd& up, const std::vector<ArrayXd*>& adj) {
        for (Eigen::Index r = 0; r < up.size(); ++r) {
            (*adj[0])[r * cols + index[static_cast<std::size_t>(r)]] += up[r];
        }
    };
    return make_op("gather", {a}, Shape{rows}, std::move(out), std::move(fn));
}

Tensor clamp_min(const Tensor& a, double floor_value) {
    ArrayXd out = a.values().cwiseMax(floor_value);
    BackwardFn fn = [a, floor_value](const ArrayXd& up, const std::vector<ArrayXd*>& adj) {
        *adj[0] += up * (a.values() > floor_value).cast<double>();
    };
    return make_op("clamp_min", {a}, a.shape(), std::move(out), std::move(fn));
}

Tensor grad_reverse(const Tensor& a, double reversal_scale) {
    if (reversal_scale < 0.0) throw ContractError("grad_reverse scale must be nonnegative");
    ArrayXd out = a.values();
    BackwardFn fn = [reversal_scale](const ArrayXd& up, const std::vector<ArrayXd*>& adj) {
        *adj[0] += up * (-reversal_scale);
    };
    return make_op("grad_reverse", {a}, a.shape(), std::move(out), std::move(fn));
}

Tensor detach(const Tensor& a) {
    return Tensor(a.shape(), a.values(), false);
}

} // namespace unlearn
