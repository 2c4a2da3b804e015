#pragma once

#include <random>
#include <string>

#include "entcap/autograd.hpp"

namespace entcap::nn {

using ag::Matrix;
using ag::Parameter;
using ag::ParameterStore;
using ag::Tape;
using ag::Var;

/// N(0, stddev) initialiser drawing from the caller's generator.
Matrix normal_init(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng);

class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, Eigen::Index in, Eigen::Index out,
         std::mt19937_64& rng, double init_std = 0.02);

  Var operator()(Tape& tape, Var x) const;

 private:
  Parameter* weight_ = nullptr;  // in x out
  Parameter* bias_ = nullptr;    // 1 x out
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, Eigen::Index width);

  Var operator()(Tape& tape, Var x) const;

 private:
  Parameter* gain_ = nullptr;
  Parameter* bias_ = nullptr;
};

/// Pre-norm transformer block: x + Attn(LN(x)), then x + MLP(LN(x)) with a 4x GELU MLP.
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(ParameterStore& store, const std::string& name, Eigen::Index width, int heads,
                   std::mt19937_64& rng);

  Var operator()(Tape& tape, Var x, bool causal) const;

 private:
  int heads_ = 1;
  LayerNorm ln_attn_;
  Linear query_;
  Linear key_;
  Linear value_;
  Linear attn_out_;
  LayerNorm ln_mlp_;
  Linear mlp_in_;
  Linear mlp_out_;
};

}  // namespace entcap::nn
