// SPDX-License-Identifier: Apache-2.0

#include "krlm/attention.hpp"

#include <cmath>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace krlm {

MemoryWeights MemoryWeights::create(int layers, Index f, Index d, ParameterStore& store, std::mt19937_64& rng) {
  MemoryWeights w;
  for (int n = 0; n < layers; ++n) {
    w.m_q.push_back(&store.add(fmt::format("attention.layer{}.m_q", n), uniform_init(f, d, f, rng), true));
    w.m_v.push_back(&store.add(fmt::format("attention.layer{}.m_v", n), uniform_init(d, f, d, rng), true));
  }
  return w;
}

Var plain_attention_mix(const Var& Hn, const Backbone::Layer& layer) {
  Tape& t = *Hn.tape();
  const double inv = 1.0 / std::sqrt(static_cast<double>(Hn.cols()));
  Var q = ops::matmul(Hn, t.param(*layer.wq));
  Var k = ops::matmul(Hn, t.param(*layer.wk));
  Var a = ops::softmax_rows(ops::scale(ops::matmul(q, ops::transpose(k)), inv), 0);
  return ops::matmul(a, ops::matmul(Hn, t.param(*layer.wv)));
}

Var attention_mix(const Var& Hn, const Memory& memory, const Backbone::Layer& layer, Parameter& m_q,
                  Parameter& m_v, Var* coefficients) {
  Tape& t = *Hn.tape();
  if (Hn.cols() != layer.wq->value.rows()) throw ContractError("attention: hidden width does not match the layer");
  const double inv = 1.0 / std::sqrt(static_cast<double>(Hn.cols()));
  Var q = ops::matmul(Hn, t.param(*layer.wq));
  Var k = ops::matmul(Hn, t.param(*layer.wk));
  Var tok_logits = ops::matmul(q, ops::transpose(k));
  Var v = ops::matmul(Hn, t.param(*layer.wv));
  if (memory.size() == 0) {
    Var a = ops::softmax_rows(ops::scale(tok_logits, inv), 0);
    if (coefficients != nullptr) *coefficients = a;
    return ops::matmul(a, v);
  }
  const Var& e = memory.embeddings;
  if (e.cols() != m_q.value.cols()) throw ContractError("attention: memory width does not match M_Q");
  Var mem_logits = ops::matmul(ops::matmul(Hn, t.param(m_q)), ops::transpose(e));
  const Var logit_parts[] = {mem_logits, tok_logits};
  Var a = ops::softmax_rows(ops::scale(ops::concat_cols(logit_parts), inv), memory.size());
  if (coefficients != nullptr) *coefficients = a;
  const Var value_parts[] = {ops::matmul(e, t.param(m_v)), v};
  return ops::matmul(a, ops::concat_rows(value_parts));
}

Var attention_layer(const Var& H, const Memory& memory, int n, const Backbone& backbone, const MemoryWeights& weights,
                    AttentionTraceLayer* trace) {
  const Backbone::Layer& l = backbone.layer(n);
  const auto idx = static_cast<std::size_t>(n);
  if (idx >= weights.m_q.size()) throw ContractError("attention: no memory weights for this layer");
  Var hn = ops::rms_norm(H, l.norm_attn->value);
  Var coeff;
  Var mix = attention_mix(hn, memory, l, *weights.m_q[idx], *weights.m_v[idx], trace ? &coeff : nullptr);
  if (trace != nullptr) {
    const Matrix& a = coeff.value();
    const Index last = a.rows() - 1;
    const Index k = memory.size();
    trace->layer = n;
    trace->beta.assign(a.row(last).data(), a.row(last).data() + k);
    trace->alpha.resize(static_cast<std::size_t>(a.cols() - k));
    for (Index c = k; c < a.cols(); ++c) trace->alpha[static_cast<std::size_t>(c - k)] = a(last, c);
  }
  return backbone.feed_forward(ops::add(H, mix), n);
}

StackResult run_stack(const Var& T, const Memory& memory, const Backbone& backbone, const MemoryWeights& weights) {
  if (T.cols() != backbone.hidden()) throw ContractError("run_stack: instruction width does not match the backbone");
  StackResult out;
  out.trace.memory_ids = memory.ids;
  out.trace.memory_scores = memory.scores;
  Var h = ops::add_const(T, backbone.positions(T.rows()));
  for (int n = 0; n < backbone.layer_count(); ++n) {
    AttentionTraceLayer tl;
    h = attention_layer(h, memory, n, backbone, weights, &tl);
    out.trace.layers.push_back(std::move(tl));
  }
  out.hidden = ops::rms_norm(h, backbone.final_norm());
  return out;
}

Eigen::RowVectorXd last_token_closed_form(const Matrix& Hn, const Matrix& memory, const Matrix& wq, const Matrix& wk,
                                          const Matrix& wv, const Matrix& m_q, const Matrix& m_v) {
  const Index m = Hn.rows();
  const Index k = memory.rows();
  const double root_f = std::sqrt(static_cast<double>(Hn.cols()));
  const Eigen::RowVectorXd x = Hn.row(m - 1);
  const Eigen::RowVectorXd qx = x * wq;
  const Eigen::RowVectorXd mx = x * m_q;
  std::vector<double> s_tok(static_cast<std::size_t>(m)), s_mem(static_cast<std::size_t>(k));
  double top = -INFINITY;
  for (Index i = 0; i < m; ++i) {
    s_tok[static_cast<std::size_t>(i)] = qx.dot(Hn.row(i) * wk) / root_f;
    top = std::max(top, s_tok[static_cast<std::size_t>(i)]);
  }
  for (Index j = 0; j < k; ++j) {
    s_mem[static_cast<std::size_t>(j)] = mx.dot(memory.row(j)) / root_f;
    top = std::max(top, s_mem[static_cast<std::size_t>(j)]);
  }
  double z = 0.0;
  for (double s : s_tok) z += std::exp(s - top);
  for (double s : s_mem) z += std::exp(s - top);
  Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(Hn.cols());
  for (Index i = 0; i < m; ++i) {
    const double alpha = std::exp(s_tok[static_cast<std::size_t>(i)] - top) / z;
    out += alpha * (Hn.row(i) * wv);
  }
  for (Index j = 0; j < k; ++j) {
    const double beta = std::exp(s_mem[static_cast<std::size_t>(j)] - top) / z;
    out += beta * (memory.row(j) * m_v);
  }
  return out;
}

void write_trace_jsonl(std::ostream& os, const AttentionTrace& trace) {
  for (const AttentionTraceLayer& l : trace.layers) {
    nlohmann::json j;
    j["layer"] = l.layer;
    j["alpha"] = l.alpha;
    j["beta"] = l.beta;
    j["memory_entity_ids"] = trace.memory_ids;
    j["memory_struct_scores"] = trace.memory_scores;
    os << j.dump() << '\n';
  }
}

}  // namespace krlm
