#pragma once

#include "msif/tensor.hpp"

namespace msif {

// Per-sample graph stack: attrs may carry gradients, the adjacency tensors
// are detached constants derived from positions.
struct SpatioTemporalGraph {
  Tensor attrs;     // [T,N,C]
  Tensor adj;       // [T,N,N] reciprocal-distance kernel, zero diagonal
  Tensor adj_norm;  // [T,N,N] symmetric-normalized with self loops
};

// a[t,i,j] = 1 / (||p_i - p_j|| + eps) off the diagonal, 0 on it.
Tensor kernel_adjacency(const Tensor& positions, double eps = 1e-6);

// D^{-1/2} (A + I) D^{-1/2} per time step, D = row sums of A + I.
Tensor normalize_adjacency(const Tensor& adj);

SpatioTemporalGraph build_graph(const Tensor& attrs, const Tensor& positions, double eps = 1e-6);

}  // namespace msif
