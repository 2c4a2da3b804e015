#include "entcap/nn.hpp"

#include <fmt/format.h>

#include "entcap/errors.hpp"

namespace entcap::nn {

Matrix normal_init(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

Linear::Linear(ParameterStore& store, const std::string& name, Eigen::Index in, Eigen::Index out,
               std::mt19937_64& rng, double init_std)
    : weight_(&store.add(name + ".weight", normal_init(in, out, init_std, rng))),
      bias_(&store.add(name + ".bias", Matrix::Zero(1, out))) {}

Var Linear::operator()(Tape& tape, Var x) const {
  return ag::add_row(ag::matmul(x, tape.param(*weight_)), tape.param(*bias_));
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, Eigen::Index width)
    : gain_(&store.add(name + ".gain", Matrix::Ones(1, width))),
      bias_(&store.add(name + ".bias", Matrix::Zero(1, width))) {}

Var LayerNorm::operator()(Tape& tape, Var x) const {
  return ag::layer_norm(x, tape.param(*gain_), tape.param(*bias_));
}

TransformerBlock::TransformerBlock(ParameterStore& store, const std::string& name,
                                   Eigen::Index width, int heads, std::mt19937_64& rng)
    : heads_(heads) {
  if (heads <= 0 || width % heads != 0) {
    throw ConfigError(fmt::format("width {} not divisible into {} heads", width, heads));
  }
  ln_attn_ = LayerNorm(store, name + ".ln_attn", width);
  query_ = Linear(store, name + ".attn.query", width, width, rng);
  key_ = Linear(store, name + ".attn.key", width, width, rng);
  value_ = Linear(store, name + ".attn.value", width, width, rng);
  attn_out_ = Linear(store, name + ".attn.out", width, width, rng);
  ln_mlp_ = LayerNorm(store, name + ".ln_mlp", width);
  mlp_in_ = Linear(store, name + ".mlp.in", width, 4 * width, rng);
  mlp_out_ = Linear(store, name + ".mlp.out", 4 * width, width, rng);
}

Var TransformerBlock::operator()(Tape& tape, Var x, bool causal) const {
  const Var h = ln_attn_(tape, x);
  const Var attended = ag::attention(query_(tape, h), key_(tape, h), value_(tape, h), heads_, causal);
  x = ag::add(x, attn_out_(tape, attended));
  const Var m = ln_mlp_(tape, x);
  return ag::add(x, mlp_out_(tape, ag::gelu(mlp_in_(tape, m))));
}

}  // namespace entcap::nn
