#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dfe/numcore/tape.hpp"

// Differentiable primitives. Every function records exactly one node on the
// tape of its first argument. Matrix-shaped ops read operands as
// `rows() x cols()` (last extent = columns).

namespace dfe::nc {

Var matmul(Var a, Var b);     // [m,k] x [k,n]
Var matmul_nt(Var a, Var b);  // [m,k] x [n,k]^T
/// x W^T (+ b): x [m,in], W [out,in], b [out].
Var linear(Var x, Var w);
Var linear(Var x, Var w, Var b);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// Row r of x gets row (r mod p.rows()) of p added; p.rows() must divide x.rows().
Var add_broadcast_rows(Var x, Var p);

Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var softmax(Var x);
Var gelu(Var x);
Var relu(Var x);

Var mean_axis(Var x, std::size_t axis);
Var reshape(Var x, Shape shape);

Var sum(Var x);
Var sum_squares(Var x);
Var l1_norm(Var x);
Var l2_norm(Var x);

/// Multi-head self-attention over packed projections.
/// qkv: [batch*seq, 3*H] laid out as [Q | K | V]; returns [batch*seq, H].
Var attention(Var qkv, std::size_t seq_len, std::size_t heads);

/// Rows of `table` selected by `indices`; gradients scatter-add back.
Var gather_rows(Var table, std::span<const std::uint32_t> indices);

/// (1 / (K(K-1))) * sum_{i != j} (e_i . e_j)^2 over the rows of e [K, D].
Var pairwise_orthogonality(Var e);

Var stop_gradient(Var x);

}  // namespace dfe::nc
