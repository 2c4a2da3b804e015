#include "entcap/autograd.hpp"

#include <cmath>
#include <limits>
#include <memory>

#include <fmt/format.h>

#include "entcap/errors.hpp"

namespace entcap::ag {

namespace {

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw ShapeError(fmt::format("{}: {}", op, detail));
}

std::string dims(const Matrix& m) { return fmt::format("{}x{}", m.rows(), m.cols()); }

}  // namespace

Parameter& ParameterStore::add(std::string name, Matrix init) {
  if (find(name) != nullptr) throw ConfigError(fmt::format("duplicate parameter '{}'", name));
  Parameter p;
  p.name = std::move(name);
  p.grad = Matrix::Zero(init.rows(), init.cols());
  p.value = std::move(init);
  params_.push_back(std::move(p));
  return params_.back();
}

Parameter* ParameterStore::find(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += static_cast<std::size_t>(p.value.size());
  return total;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void ParameterStore::set_trainable_prefix(const std::string& prefix, bool trainable) {
  for (auto& p : params_) {
    if (p.name.rfind(prefix, 0) == 0) p.trainable = trainable;
  }
}

const Matrix& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, nullptr, false});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::param(Parameter& p) {
  // Parameters are referenced, not copied; the node's value is read through the pointer.
  nodes_.push_back(Node{{}, {}, nullptr, &p, record_ && p.trainable});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::push(Matrix value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  if (record_) {
    for (const auto& in : inputs) needs = needs || needs_grad(in.id());
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : nullptr, nullptr, needs});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Matrix& Tape::grad_slot(int id) {
  Node& node = nodes_[static_cast<std::size_t>(id)];
  if (node.grad.size() == 0) {
    const Matrix& v = node.param != nullptr ? node.param->value : node.value;
    node.grad = Matrix::Zero(v.rows(), v.cols());
  }
  return node.grad;
}

void Tape::accumulate(int id, const Matrix& grad) {
  if (!needs_grad(id)) return;
  grad_slot(id) += grad;
}

void Tape::backward(Var loss) {
  if (!record_) throw Error("backward() on a tape that does not record");
  const Matrix& v = value(loss.id());
  require(v.rows() == 1 && v.cols() == 1, "backward", "loss must be 1x1, got " + dims(v));
  if (!needs_grad(loss.id())) return;
  grad_slot(loss.id()).setConstant(1.0);
  for (int id = loss.id(); id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.needs_grad || node.grad.size() == 0) continue;
    if (node.param != nullptr) {
      if (node.param->grad.size() == 0) node.param->zero_grad();
      node.param->grad += node.grad;
    } else if (node.backward) {
      node.backward(*this, node.grad);
    }
  }
}

const Matrix& Tape::value(int id) const {
  const Node& node = nodes_[static_cast<std::size_t>(id)];
  return node.param != nullptr ? node.param->value : node.value;
}

Var matmul(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require(av.cols() == bv.rows(), "matmul", dims(av) + " * " + dims(bv));
  const Var in[] = {a, b};
  return a.tape()->push(av * bv, in, [ia = a.id(), ib = b.id()](Tape& t, const Matrix& g) {
    if (t.needs_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.needs_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require(av.cols() == bv.cols(), "matmul_nt", dims(av) + " * (" + dims(bv) + ")^T");
  const Var in[] = {a, b};
  return a.tape()->push(av * bv.transpose(), in, [ia = a.id(), ib = b.id()](Tape& t, const Matrix& g) {
    if (t.needs_grad(ia)) t.accumulate(ia, g * t.value(ib));
    if (t.needs_grad(ib)) t.accumulate(ib, g.transpose() * t.value(ia));
  });
}

Var add(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require(av.rows() == bv.rows() && av.cols() == bv.cols(), "add", dims(av) + " + " + dims(bv));
  const Var in[] = {a, b};
  return a.tape()->push(av + bv, in, [ia = a.id(), ib = b.id()](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var add_row(Var a, Var row) {
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  require(rv.rows() == 1 && rv.cols() == av.cols(), "add_row", dims(av) + " + row " + dims(rv));
  Matrix out = av.rowwise() + rv.row(0);
  const Var in[] = {a, row};
  return a.tape()->push(std::move(out), in, [ia = a.id(), ir = row.id()](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    if (t.needs_grad(ir)) t.accumulate(ir, g.colwise().sum());
  });
}

Var scale(Var a, double s) {
  const Var in[] = {a};
  return a.tape()->push(a.value() * s, in, [ia = a.id(), s](Tape& t, const Matrix& g) {
    t.accumulate(ia, g * s);
  });
}

Var gelu(Var a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double kA = 0.044715;
  const Matrix& x = a.value();
  Matrix out = x.unaryExpr([](double v) {
    return 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  });
  const Var in[] = {a};
  return a.tape()->push(std::move(out), in, [ia = a.id()](Tape& t, const Matrix& g) {
    const Matrix& xv = t.value(ia);
    Matrix d = xv.unaryExpr([](double v) {
      const double th = std::tanh(kC * (v + kA * v * v * v));
      return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kC * (1.0 + 3.0 * kA * v * v);
    });
    t.accumulate(ia, g.cwiseProduct(d));
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.cols();
  require(gain.rows() == 1 && gain.cols() == n && bias.rows() == 1 && bias.cols() == n,
          "layer_norm", "gain/bias must be 1x" + std::to_string(n));
  Matrix xhat(xv.rows(), n);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
               bias.value().row(0).array();
  const Var in[] = {x, gain, bias};
  auto saved = std::make_shared<std::pair<Matrix, Eigen::VectorXd>>(std::move(xhat), std::move(inv_std));
  return x.tape()->push(std::move(out), in,
                        [ix = x.id(), ig = gain.id(), ib = bias.id(), saved](Tape& t, const Matrix& g) {
    const Matrix& xh = saved->first;
    const Eigen::VectorXd& istd = saved->second;
    if (t.needs_grad(ig)) t.accumulate(ig, g.cwiseProduct(xh).colwise().sum());
    if (t.needs_grad(ib)) t.accumulate(ib, g.colwise().sum());
    if (t.needs_grad(ix)) {
      const Matrix dxhat = g.array().rowwise() * t.value(ig).row(0).array();
      Matrix dx(dxhat.rows(), dxhat.cols());
      for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
        const double mean_d = dxhat.row(r).mean();
        const double mean_dx = dxhat.row(r).cwiseProduct(xh.row(r)).mean();
        dx.row(r) = istd(r) * (dxhat.row(r).array() - mean_d - xh.row(r).array() * mean_dx);
      }
      t.accumulate(ix, dx);
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows", "no inputs");
  Tape* tape = parts.front().tape();
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    require(p.cols() == cols, "concat_rows", "column mismatch " + dims(p.value()));
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    if (p.rows() > 0) out.middleRows(offset, p.rows()) = p.value();
    layout.emplace_back(p.id(), offset);
    offset += p.rows();
  }
  return tape->push(std::move(out), parts, [layout = std::move(layout)](Tape& t, const Matrix& g) {
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const auto [id, start] = layout[i];
      const Eigen::Index end = i + 1 < layout.size() ? layout[i + 1].second : g.rows();
      if (end > start) t.accumulate_block(id, 0, 0, g.middleRows(start, end - start));
    }
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows",
          fmt::format("[{}, {}) of {} rows", start, start + count, a.rows()));
  const Var in[] = {a};
  return a.tape()->push(a.value().middleRows(start, count), in,
                        [ia = a.id(), start](Tape& t, const Matrix& g) {
    t.accumulate_block(ia, start, 0, g);
  });
}

Var reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
  const Matrix& av = a.value();
  require(rows * cols == av.size(), "reshape", dims(av) + fmt::format(" -> {}x{}", rows, cols));
  Matrix out = Eigen::Map<const Matrix>(av.data(), rows, cols);
  const Var in[] = {a};
  return a.tape()->push(std::move(out), in, [ia = a.id()](Tape& t, const Matrix& g) {
    const Matrix& src = t.value(ia);
    t.accumulate(ia, Eigen::Map<const Matrix>(g.data(), src.rows(), src.cols()));
  });
}

Var gather_rows(Var table, std::span<const int> ids) {
  const Matrix& tv = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < tv.rows(), "gather_rows",
            fmt::format("id {} outside table of {} rows", ids[i], tv.rows()));
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  const Var in[] = {table};
  return table.tape()->push(std::move(out), in,
                            [it = table.id(), ids = std::vector<int>(ids.begin(), ids.end())](
                                Tape& t, const Matrix& g) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      t.accumulate_block(it, ids[i], 0, g.row(static_cast<Eigen::Index>(i)));
    }
  });
}

Var attention(Var q, Var k, Var v, int heads, bool causal) {
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  require(qv.cols() == kv.cols() && kv.cols() == vv.cols() && kv.rows() == vv.rows(), "attention",
          dims(qv) + ", " + dims(kv) + ", " + dims(vv));
  require(heads > 0 && qv.cols() % heads == 0, "attention", "width not divisible by head count");
  require(!causal || qv.rows() == kv.rows(), "attention", "causal attention needs square scores");
  const Eigen::Index tq = qv.rows();
  const Eigen::Index tk = kv.rows();
  const Eigen::Index dh = qv.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  auto probs = std::make_shared<std::vector<Matrix>>(static_cast<std::size_t>(heads));
  Matrix out(tq, qv.cols());
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index c0 = h * dh;
    Matrix s = qv.middleCols(c0, dh) * kv.middleCols(c0, dh).transpose() * scale;
    for (Eigen::Index i = 0; i < tq; ++i) {
      const Eigen::Index visible = causal ? i + 1 : tk;
      const double m = s.row(i).head(visible).maxCoeff();
      double z = 0.0;
      for (Eigen::Index j = 0; j < tk; ++j) {
        const double e = j < visible ? std::exp(s(i, j) - m) : 0.0;
        s(i, j) = e;
        z += e;
      }
      s.row(i) /= z;
    }
    out.middleCols(c0, dh) = s * vv.middleCols(c0, dh);
    (*probs)[static_cast<std::size_t>(h)] = std::move(s);
  }

  const Var in[] = {q, k, v};
  return q.tape()->push(std::move(out), in,
                        [iq = q.id(), ik = k.id(), iv = v.id(), heads, dh, scale, probs](
                            Tape& t, const Matrix& g) {
    const Matrix& qv2 = t.value(iq);
    const Matrix& kv2 = t.value(ik);
    const Matrix& vv2 = t.value(iv);
    Matrix dq = Matrix::Zero(qv2.rows(), qv2.cols());
    Matrix dk = Matrix::Zero(kv2.rows(), kv2.cols());
    Matrix dv = Matrix::Zero(vv2.rows(), vv2.cols());
    for (int h = 0; h < heads; ++h) {
      const Eigen::Index c0 = h * dh;
      const Matrix& p = (*probs)[static_cast<std::size_t>(h)];
      const Matrix go = g.middleCols(c0, dh);
      dv.middleCols(c0, dh) = p.transpose() * go;
      const Matrix dp = go * vv2.middleCols(c0, dh).transpose();
      const Eigen::VectorXd row_dot = dp.cwiseProduct(p).rowwise().sum();
      const Matrix ds = p.cwiseProduct(dp.colwise() - row_dot) * scale;
      dq.middleCols(c0, dh) = ds * kv2.middleCols(c0, dh);
      dk.middleCols(c0, dh) = ds.transpose() * qv2.middleCols(c0, dh);
    }
    t.accumulate(iq, dq);
    t.accumulate(ik, dk);
    t.accumulate(iv, dv);
  });
}

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  const Matrix& lv = logits.value();
  require(lv.rows() == static_cast<Eigen::Index>(targets.size()) && !targets.empty(),
          "cross_entropy", fmt::format("{} logit rows for {} targets", lv.rows(), targets.size()));
  const Matrix logp = log_softmax_rows(lv);
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    require(targets[i] >= 0 && targets[i] < lv.cols(), "cross_entropy", "target id out of range");
    total -= logp(static_cast<Eigen::Index>(i), targets[i]);
  }
  const double count = static_cast<double>(targets.size());
  Matrix out(1, 1);
  out(0, 0) = total / count;
  const Var in[] = {logits};
  auto probs = std::make_shared<Matrix>(logp.array().exp().matrix());
  return logits.tape()->push(std::move(out), in,
                             [il = logits.id(), probs, count,
                              tg = std::vector<int>(targets.begin(), targets.end())](
                                 Tape& t, const Matrix& g) {
    Matrix d = *probs;
    for (std::size_t i = 0; i < tg.size(); ++i) d(static_cast<Eigen::Index>(i), tg[i]) -= 1.0;
    t.accumulate(il, d * (g(0, 0) / count));
  });
}

Var sum_all(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const Var in[] = {a};
  return a.tape()->push(std::move(out), in, [ia = a.id()](Tape& t, const Matrix& g) {
    const Matrix& v = t.value(ia);
    t.accumulate(ia, Matrix::Constant(v.rows(), v.cols(), g(0, 0)));
  });
}

}  // namespace entcap::ag
