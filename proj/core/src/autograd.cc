#include "cstt/autograd.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace cstt::ag {

namespace {

void RequireSameShape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" +
                                std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
  }
}

Tape& TapeOf(const Var& v) {
  if (!v.valid()) throw std::logic_error("operation on an unbound Var");
  return *v.tape();
}

}  // namespace

Parameter::Parameter(std::string name, Matrix value)
    : name(std::move(name)), value(std::move(value)) {
  grad = Matrix::Zero(this->value.rows(), this->value.cols());
}

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw std::logic_error("scalar() on a non-1x1 node");
  return v(0, 0);
}

Var Tape::Constant(Matrix value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::Param(Parameter& param) {
  if (auto it = param_nodes_.find(&param); it != param_nodes_.end()) {
    return Var(this, it->second);
  }
  Node node;
  node.value = param.value;
  node.requires_grad = true;
  node.param = &param;
  nodes_.push_back(std::move(node));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(&param, id);
  return Var(this, id);
}

Var Tape::Record(Matrix value, std::initializer_list<Var> inputs,
                 BackwardFn backward) {
  return Record(std::move(value), std::span<const Var>(inputs.begin(),
                                                       inputs.size()),
                std::move(backward));
}

Var Tape::Record(Matrix value, std::span<const Var> inputs,
                 BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape() != this) throw std::logic_error("Var from a different tape");
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix& Tape::grad(int id) {
  Node& node = nodes_[id];
  if (!node.has_grad) {
    node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
    node.has_grad = true;
  }
  return node.grad;
}

void Tape::Accumulate(Var input, const Matrix& g) {
  if (!nodes_[input.id()].requires_grad) return;
  grad(input.id()) += g;
}

void Tape::Backward(Var root, double seed) {
  if (root.tape() != this) throw std::logic_error("root from another tape");
  if (root.value().size() != 1) {
    throw std::logic_error("Backward requires a 1x1 root");
  }
  if (!nodes_[root.id()].requires_grad) return;
  grad(root.id())(0, 0) += seed;
  for (int id = root.id(); id >= 0; --id) {
    Node& node = nodes_[id];
    if (!node.has_grad || !node.requires_grad) continue;
    if (node.param != nullptr) {
      node.param->grad += node.grad;
    } else if (node.backward) {
      node.backward(*this, id);
    }
  }
}

std::vector<Parameter*> Tape::Parameters() const {
  std::vector<Parameter*> out;
  std::unordered_set<Parameter*> seen;
  for (const Node& node : nodes_) {
    if (node.param != nullptr && seen.insert(node.param).second) {
      out.push_back(node.param);
    }
  }
  return out;
}

Var Add(Var a, Var b) {
  RequireSameShape(a, b, "Add");
  return TapeOf(a).Record(a.value() + b.value(), {a, b},
                          [a, b](Tape& t, int self) {
                            const Matrix& g = t.grad(self);
                            t.Accumulate(a, g);
                            t.Accumulate(b, g);
                          });
}

Var Sub(Var a, Var b) {
  RequireSameShape(a, b, "Sub");
  return TapeOf(a).Record(a.value() - b.value(), {a, b},
                          [a, b](Tape& t, int self) {
                            const Matrix& g = t.grad(self);
                            t.Accumulate(a, g);
                            t.Accumulate(b, -g);
                          });
}

Var Scale(Var a, double s) {
  return TapeOf(a).Record(a.value() * s, {a}, [a, s](Tape& t, int self) {
    t.Accumulate(a, t.grad(self) * s);
  });
}

Var AddRow(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw std::invalid_argument("AddRow: row must be 1 x cols(a)");
  }
  Matrix out = a.value().rowwise() + row.value().row(0);
  return TapeOf(a).Record(std::move(out), {a, row},
                          [a, row](Tape& t, int self) {
                            const Matrix& g = t.grad(self);
                            t.Accumulate(a, g);
                            t.Accumulate(row, g.colwise().sum());
                          });
}

Var AddConstant(Var a, const Matrix& c) {
  if (c.rows() != a.rows() || c.cols() != a.cols()) {
    throw std::invalid_argument("AddConstant: shape mismatch");
  }
  return TapeOf(a).Record(a.value() + c, {a}, [a](Tape& t, int self) {
    t.Accumulate(a, t.grad(self));
  });
}

Var MatMul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("MatMul: inner dimensions differ");
  }
  Matrix out = a.value() * b.value();
  return TapeOf(a).Record(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(a.id())) t.Accumulate(a, g * b.value().transpose());
    if (t.requires_grad(b.id())) t.Accumulate(b, a.value().transpose() * g);
  });
}

Var MatMulBT(Var a, Var b) {
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("MatMulBT: column counts differ");
  }
  Matrix out = a.value() * b.value().transpose();
  return TapeOf(a).Record(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(a.id())) t.Accumulate(a, g * b.value());
    if (t.requires_grad(b.id())) t.Accumulate(b, g.transpose() * a.value());
  });
}

Var Relu(Var a) {
  Matrix out = a.value().cwiseMax(0.0);
  return TapeOf(a).Record(std::move(out), {a}, [a](Tape& t, int self) {
    Matrix g = t.grad(self);
    const Matrix& x = a.value();
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      if (x.data()[i] <= 0.0) g.data()[i] = 0.0;
    }
    t.Accumulate(a, g);
  });
}

Var Tanh(Var a) {
  Matrix out = a.value().array().tanh().matrix();
  return TapeOf(a).Record(out, {a}, [a, out](Tape& t, int self) {
    Matrix g = t.grad(self).array() * (1.0 - out.array().square());
    t.Accumulate(a, g);
  });
}

Var Sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return TapeOf(a).Record(std::move(out), {a}, [a](Tape& t, int self) {
    double g = t.grad(self)(0, 0);
    t.Accumulate(a, Matrix::Constant(a.rows(), a.cols(), g));
  });
}

Var Mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw std::invalid_argument("Mean of an empty matrix");
  return Scale(Sum(a), 1.0 / n);
}

Var WeightedSum(std::span<const Var> terms, std::span<const double> weights) {
  if (terms.empty() || terms.size() != weights.size()) {
    throw std::invalid_argument("WeightedSum: terms/weights mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    total += weights[i] * terms[i].scalar();
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  std::vector<Var> ins(terms.begin(), terms.end());
  std::vector<double> ws(weights.begin(), weights.end());
  return TapeOf(terms[0]).Record(
      std::move(out), std::span<const Var>(ins), [ins, ws](Tape& t, int self) {
        double g = t.grad(self)(0, 0);
        for (std::size_t i = 0; i < ins.size(); ++i) {
          Matrix gi(1, 1);
          gi(0, 0) = g * ws[i];
          t.Accumulate(ins[i], gi);
        }
      });
}

Var GatherRows(Var table, std::span<const int> ids) {
  const Matrix& tv = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) {
      throw std::out_of_range("GatherRows: id " + std::to_string(ids[i]) +
                              " outside [0, " + std::to_string(tv.rows()) +
                              ")");
    }
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return TapeOf(table).Record(std::move(out), {table},
                              [table, idv](Tape& t, int self) {
                                const Matrix& g = t.grad(self);
                                Matrix gt = Matrix::Zero(table.rows(),
                                                         table.cols());
                                for (std::size_t i = 0; i < idv.size(); ++i) {
                                  gt.row(idv[i]) +=
                                      g.row(static_cast<Eigen::Index>(i));
                                }
                                t.Accumulate(table, gt);
                              });
}

Var RepeatRows(Var x, std::span<const int> counts) {
  if (static_cast<Eigen::Index>(counts.size()) != x.rows()) {
    throw std::invalid_argument("RepeatRows: counts length " +
                                std::to_string(counts.size()) +
                                " != rows " + std::to_string(x.rows()));
  }
  Eigen::Index total = 0;
  for (int c : counts) {
    if (c < 0) throw std::invalid_argument("RepeatRows: negative count");
    total += c;
  }
  const Matrix& xv = x.value();
  Matrix out(total, xv.cols());
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    for (int k = 0; k < counts[i]; ++k) {
      out.row(r++) = xv.row(static_cast<Eigen::Index>(i));
    }
  }
  std::vector<int> cv(counts.begin(), counts.end());
  return TapeOf(x).Record(std::move(out), {x}, [x, cv](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix gx = Matrix::Zero(x.rows(), x.cols());
    Eigen::Index r = 0;
    for (std::size_t i = 0; i < cv.size(); ++i) {
      for (int k = 0; k < cv[i]; ++k) {
        gx.row(static_cast<Eigen::Index>(i)) += g.row(r++);
      }
    }
    t.Accumulate(x, gx);
  });
}

Var MixRows(Var a, Var b, const std::vector<bool>& take_b) {
  RequireSameShape(a, b, "MixRows");
  if (static_cast<Eigen::Index>(take_b.size()) != a.rows()) {
    throw std::invalid_argument("MixRows: mask length != rows");
  }
  Matrix out = a.value();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    if (take_b[i]) out.row(i) = b.value().row(i);
  }
  return TapeOf(a).Record(std::move(out), {a, b},
                          [a, b, take_b](Tape& t, int self) {
                            const Matrix& g = t.grad(self);
                            Matrix ga = g;
                            Matrix gb = Matrix::Zero(g.rows(), g.cols());
                            for (Eigen::Index i = 0; i < g.rows(); ++i) {
                              if (take_b[i]) {
                                gb.row(i) = g.row(i);
                                ga.row(i).setZero();
                              }
                            }
                            t.Accumulate(a, ga);
                            t.Accumulate(b, gb);
                          });
}

Var PairwiseRowSum(Var a, Var b) {
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("PairwiseRowSum: column counts differ");
  }
  const Eigen::Index n = a.rows();
  const Eigen::Index m = b.rows();
  Matrix out(n * m, a.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    out.middleRows(i * m, m) = b.value().rowwise() + a.value().row(i);
  }
  return TapeOf(a).Record(std::move(out), {a, b},
                          [a, b, n, m](Tape& t, int self) {
                            const Matrix& g = t.grad(self);
                            Matrix ga(n, g.cols());
                            Matrix gb = Matrix::Zero(m, g.cols());
                            for (Eigen::Index i = 0; i < n; ++i) {
                              auto block = g.middleRows(i * m, m);
                              ga.row(i) = block.colwise().sum();
                              gb += block;
                            }
                            t.Accumulate(a, ga);
                            t.Accumulate(b, gb);
                          });
}

Var LayerNorm(Var x, Var gamma, Var beta, double eps) {
  const Matrix& xv = x.value();
  const Eigen::Index d = xv.cols();
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 ||
      beta.cols() != d) {
    throw std::invalid_argument("LayerNorm: gamma/beta must be 1 x cols");
  }
  Matrix xhat(xv.rows(), d);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    double mu = xv.row(i).mean();
    double var = (xv.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mu) * inv_std(i);
  }
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array())
                   .rowwise() +
               beta.value().row(0).array();
  return TapeOf(x).Record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, inv_std](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        t.Accumulate(gamma, (g.array() * xhat.array()).colwise().sum());
        t.Accumulate(beta, g.colwise().sum());
        if (!t.requires_grad(x.id())) return;
        Matrix dxhat = g.array().rowwise() * gamma.value().row(0).array();
        Matrix dx(g.rows(), g.cols());
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
          double m1 = dxhat.row(i).mean();
          double m2 = (dxhat.row(i).array() * xhat.row(i).array()).mean();
          dx.row(i) = ((dxhat.row(i).array() - m1) -
                       xhat.row(i).array() * m2) *
                      inv_std(i);
        }
        t.Accumulate(x, dx);
      });
}

Var MultiHeadAttention(Var q, Var k, Var v, int heads, bool causal) {
  RequireSameShape(k, v, "MultiHeadAttention(k,v)");
  if (q.cols() != k.cols()) {
    throw std::invalid_argument("MultiHeadAttention: q/k widths differ");
  }
  const Eigen::Index d = q.cols();
  if (heads < 1 || d % heads != 0) {
    throw std::invalid_argument("MultiHeadAttention: width not divisible by "
                                "head count");
  }
  if (causal && q.rows() != k.rows()) {
    throw std::invalid_argument("MultiHeadAttention: causal needs square");
  }
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Eigen::Index lq = q.rows();
  const Eigen::Index lk = k.rows();

  std::vector<Matrix> probs(heads);
  Matrix out(lq, d);
  for (int h = 0; h < heads; ++h) {
    auto qh = q.value().middleCols(h * dh, dh);
    auto kh = k.value().middleCols(h * dh, dh);
    auto vh = v.value().middleCols(h * dh, dh);
    Matrix s = (qh * kh.transpose()) * scale;
    for (Eigen::Index i = 0; i < lq; ++i) {
      Eigen::Index limit = causal ? i + 1 : lk;
      double mx = s.row(i).head(limit).maxCoeff();
      double z = 0.0;
      for (Eigen::Index j = 0; j < lk; ++j) {
        double e = j < limit ? std::exp(s(i, j) - mx) : 0.0;
        s(i, j) = e;
        z += e;
      }
      s.row(i) /= z;
    }
    out.middleCols(h * dh, dh) = s * vh;
    probs[h] = std::move(s);
  }
  return TapeOf(q).Record(
      std::move(out), {q, k, v},
      [q, k, v, heads, dh, scale, probs](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        Matrix gq = Matrix::Zero(q.rows(), q.cols());
        Matrix gk = Matrix::Zero(k.rows(), k.cols());
        Matrix gv = Matrix::Zero(v.rows(), v.cols());
        for (int h = 0; h < heads; ++h) {
          const Matrix& p = probs[h];
          auto gh = g.middleCols(h * dh, dh);
          auto qh = q.value().middleCols(h * dh, dh);
          auto kh = k.value().middleCols(h * dh, dh);
          auto vh = v.value().middleCols(h * dh, dh);
          gv.middleCols(h * dh, dh) = p.transpose() * gh;
          Matrix dp = gh * vh.transpose();
          Eigen::VectorXd rowdot = (dp.array() * p.array()).rowwise().sum();
          Matrix ds = p.array() * (dp.colwise() - rowdot).array();
          gq.middleCols(h * dh, dh) = (ds * kh) * scale;
          gk.middleCols(h * dh, dh) = (ds.transpose() * qh) * scale;
        }
        t.Accumulate(q, gq);
        t.Accumulate(k, gk);
        t.Accumulate(v, gv);
      });
}

Var Dropout(Var x, double p, std::mt19937_64* rng) {
  if (p <= 0.0 || rng == nullptr) return x;
  if (p >= 1.0) throw std::invalid_argument("Dropout: p must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  Matrix mask(x.rows(), x.cols());
  const double inv = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = keep(*rng) ? inv : 0.0;
  }
  Matrix out = x.value().cwiseProduct(mask);
  return TapeOf(x).Record(std::move(out), {x}, [x, mask](Tape& t, int self) {
    t.Accumulate(x, t.grad(self).cwiseProduct(mask));
  });
}

Var NormalizeRows(Var x, bool* degenerate, double eps) {
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), xv.cols());
  Eigen::VectorXd norms(xv.rows());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    norms(i) = xv.row(i).norm();
    if (norms(i) < eps) {
      out.row(i).setZero();
      if (degenerate != nullptr) *degenerate = true;
    } else {
      out.row(i) = xv.row(i) / norms(i);
    }
  }
  return TapeOf(x).Record(out, {x}, [x, out, norms, eps](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix gx = Matrix::Zero(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      if (norms(i) < eps) continue;
      double dot = out.row(i).dot(g.row(i));
      gx.row(i) = (g.row(i) - out.row(i) * dot) / norms(i);
    }
    t.Accumulate(x, gx);
  });
}

Var MeanSquaredError(Var a, Var b) {
  RequireSameShape(a, b, "MeanSquaredError");
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw std::invalid_argument("MeanSquaredError: empty input");
  Matrix diff = a.value() - b.value();
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm() / n;
  return TapeOf(a).Record(std::move(out), {a, b},
                          [a, b, diff, n](Tape& t, int self) {
                            Matrix g = diff * (2.0 * t.grad(self)(0, 0) / n);
                            t.Accumulate(a, g);
                            t.Accumulate(b, -g);
                          });
}

}  // namespace cstt::ag
