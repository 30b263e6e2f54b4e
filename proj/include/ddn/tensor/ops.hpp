#pragma once

#include "ddn/tensor/tape.hpp"

#include <span>
#include <string_view>
#include <vector>

namespace ddn {

// Image tensors are NCHW. Convolutions are stride 1 with zero "same" padding
// and support 1x1 and 3x3 kernels. Each sample runs its own GEMM so a
// sample's result never depends on what else is in the batch.

/// [M,K] x [K,N] -> [M,N]
Var matmul(const Var& a, const Var& b);
/// x [N,in], w [out,in], b [out] -> [N,out]
Var linear(const Var& x, const Var& w, const Var& b);
/// x [N,Cin,H,W], w [Cout,Cin,k,k], b [Cout] -> [N,Cout,H,W]
Var conv2d(const Var& x, const Var& w, const Var& b);
/// Per-sample slot-indexed convolution: sample n uses w[slots[n]], b[slots[n]].
/// w [K,Cout,Cin,k,k], b [K,Cout]. Gradients reach only the used slots.
Var slot_conv2d(const Var& x, const Var& w, const Var& b, std::span<const Index> slots);
/// Elementwise sum. `b` may also match the trailing dims of `a` (broadcast
/// over the leading axes).
Var add(const Var& a, const Var& b);
Var scale(const Var& a, float factor);
/// [N, ...] -> [N, rest]
Var flatten(const Var& a);
/// Concatenate along axis 1.
Var concat_channels(std::span<const Var> parts);
Var relu(const Var& x);
Var leaky_relu(const Var& x, float slope = 0.2f);
Var avgpool2x2(const Var& x);
Var upsample_nearest2x2(const Var& x);
/// Mean of squared differences over all elements -> scalar.
Var mse(const Var& a, const Var& b);
/// Arithmetic mean of scalar vars.
Var mean_of(std::span<const Var> scalars);
/// rows of table [R,E] -> [N,E]
Var gather_rows(const Var& table, std::span<const Index> rows);
/// [N,C] -> [N,C,H,W] by repetition.
Var broadcast_spatial(const Var& x, Index height, Index width);
/// Softmax cross-entropy averaged over the batch; logits [N,C].
Var softmax_cross_entropy(const Var& logits, std::span<const Index> labels);

// Plain (tape-free) kernels shared by the op implementations and by code that
// only needs forward values.
namespace kernels {

/// out[Cout,HW] = w[Cout, Cin*k*k] * im2col(x[Cin,H,W]) + b
void conv_forward(std::span<const float> x, Index cin, Index h, Index w, std::span<const float> weight,
                  std::span<const float> bias, Index cout, Index ksize, std::span<float> out,
                  std::vector<float>& scratch);
void im2col3x3(std::span<const float> x, Index cin, Index h, Index w, std::span<float> cols);
void col2im3x3(std::span<const float> cols, Index cin, Index h, Index w, std::span<float> x);

}  // namespace kernels

/// Op kinds reachable through the generic dispatcher.
enum class OpKind {
    matmul,
    conv2d,
    add,
    concat_channels,
    relu,
    leaky_relu,
    avgpool2x2,
    upsample_nearest2x2,
    mse,
};

struct OpAttrs {
    float slope = 0.2f;  // leaky-relu
};

std::string_view op_name(OpKind kind);

/// Generic entry point: conv2d takes {x, w, b}; all others take their natural
/// operand lists. Records onto the tape of the first input.
Var op_forward(OpKind kind, std::span<const Var> inputs, const OpAttrs& attrs = {});

}  // namespace ddn
