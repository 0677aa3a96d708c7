// SPDX-License-Identifier: Apache-2.0
//
// KRL attention: the frozen causal self-attention of the backbone extended
// with a block of memory columns holding the top-K structural entity
// embeddings. Memory keys are the raw entity embeddings queried through M_Q;
// memory values are projected by M_V. Memory columns are visible to every row.

#pragma once

#include "krlm/backbone.hpp"
#include "krlm/encoder.hpp"

#include <ostream>
#include <vector>

namespace krlm {

struct MemoryWeights {
  std::vector<Parameter*> m_q;  // per layer, F x d
  std::vector<Parameter*> m_v;  // per layer, d x F

  static MemoryWeights create(int layers, Index f, Index d, ParameterStore& store, std::mt19937_64& rng);
};

struct AttentionTraceLayer {
  int layer = 0;
  std::vector<double> alpha;  // over the m token positions
  std::vector<double> beta;   // over the K memory entries
};

struct AttentionTrace {
  std::vector<AttentionTraceLayer> layers;
  std::vector<int> memory_ids;
  std::vector<double> memory_scores;
};

// Attention sub-block on already-normalised input Hn (m x F), without the
// residual. With an empty memory this is the plain causal layer. If
// `coefficients` is non-null it receives the m x (K + m) softmax, memory
// columns first.
Var attention_mix(const Var& Hn, const Memory& memory, const Backbone::Layer& layer, Parameter& m_q,
                  Parameter& m_v, Var* coefficients = nullptr);
// The backbone's own causal attention sub-block.
Var plain_attention_mix(const Var& Hn, const Backbone::Layer& layer);

// Full layer n: H + mix(norm(H)) followed by the backbone FFN block.
Var attention_layer(const Var& H, const Memory& memory, int n, const Backbone& backbone, const MemoryWeights& weights,
                    AttentionTraceLayer* trace = nullptr);

struct StackResult {
  Var hidden;  // m x F after the final norm
  AttentionTrace trace;
};

// Adds positions to T and runs every layer with the same memory.
StackResult run_stack(const Var& T, const Memory& memory, const Backbone& backbone, const MemoryWeights& weights);

// Last-row output of attention_mix computed term by term from the explicit
// alpha/beta coefficient form. Hn is the normalised layer input.
Eigen::RowVectorXd last_token_closed_form(const Matrix& Hn, const Matrix& memory, const Matrix& wq, const Matrix& wk,
                                          const Matrix& wv, const Matrix& m_q, const Matrix& m_v);

// One JSON object per layer.
void write_trace_jsonl(std::ostream& os, const AttentionTrace& trace);

}  // namespace krlm
