#include "pdnrl/autodiff.hpp"

#include <cmath>

#include "pdnrl/error.hpp"

namespace pdnrl::ad {

namespace {

void same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape() || a.tape() == nullptr) fail(ErrorKind::Contract, "operands belong to different tapes");
}

void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    fail(ErrorKind::Shape, std::string(op) + ": shapes " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                               " and " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

}  // namespace

const Mat& Var::value() const { return tape_->node(id_).value; }

const Mat& Var::grad() const { return tape_->node(id_).grad; }

double Var::scalar() const {
  if (rows() != 1 || cols() != 1) fail(ErrorKind::Shape, "not a scalar");
  return value()(0, 0);
}

Var Tape::constant(Mat value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::leaf(Mat value) {
  Node n;
  n.grad = Mat::Zero(value.rows(), value.cols());
  n.value = std::move(value);
  n.tracked = true;
  n.leaf = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(Parameter& p) {
  Node n;
  n.value = p.value;
  n.param = &p;
  n.tracked = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Mat value, std::vector<int> inputs, std::function<void(Tape&)> push) {
  Node n;
  n.value = std::move(value);
  for (int i : inputs) n.tracked = n.tracked || tracked(i);
  if (n.tracked) n.push = std::move(push);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(int id, const Mat& g) {
  Node& n = node(id);
  if (!n.tracked) return;
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  n.grad += g;
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) fail(ErrorKind::Contract, "loss belongs to another tape");
  if (loss.rows() != 1 || loss.cols() != 1) fail(ErrorKind::Contract, "backward needs a scalar loss");
  if (!tracked(loss.id())) fail(ErrorKind::Contract, "loss does not depend on any tracked value");
  for (auto& n : nodes_)
    if (!n.leaf) n.grad.resize(0, 0);
  accumulate(loss.id(), Mat::Ones(1, 1));
  for (int i = loss.id(); i >= 0; --i) {
    Node& n = node(i);
    if (!n.tracked || n.grad.size() == 0) continue;
    if (n.push) n.push(*this);
    if (n.param) n.param->grad += n.grad;
  }
}

// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  same_tape(a, b);
  if (a.cols() != b.rows()) fail(ErrorKind::Shape, "matmul: inner dimensions differ");
  Tape* t = a.tape();
  const int ia = a.id(), ib = b.id();
  Mat out = a.value() * b.value();
  int self = static_cast<int>(t->size());
  return t->record(std::move(out), {ia, ib}, [ia, ib, self](Tape& tp) {
    const Mat& g = tp.node(self).grad;
    if (tp.tracked(ia)) tp.accumulate(ia, g * tp.node(ib).value.transpose());
    if (tp.tracked(ib)) tp.accumulate(ib, tp.node(ia).value.transpose() * g);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  same_tape(a, b);
  if (a.cols() != b.cols()) fail(ErrorKind::Shape, "matmul_nt: inner dimensions differ");
  Tape* t = a.tape();
  const int ia = a.id(), ib = b.id();
  Mat out = a.value() * b.value().transpose();
  int self = static_cast<int>(t->size());
  return t->record(std::move(out), {ia, ib}, [ia, ib, self](Tape& tp) {
    const Mat& g = tp.node(self).grad;
    if (tp.tracked(ia)) tp.accumulate(ia, g * tp.node(ib).value);
    if (tp.tracked(ib)) tp.accumulate(ib, g.transpose() * tp.node(ia).value);
  });
}

Var add(const Var& a, const Var& b) {
  same_tape(a, b);
  Tape* t = a.tape();
  const int ia = a.id(), ib = b.id();
  int self = static_cast<int>(t->size());
  if (b.rows() == 1 && a.rows() != 1 && a.cols() == b.cols()) {
    Mat out = a.value().rowwise() + b.value().row(0);
    return t->record(std::move(out), {ia, ib}, [ia, ib, self](Tape& tp) {
      const Mat& g = tp.node(self).grad;
      if (tp.tracked(ia)) tp.accumulate(ia, g);
      if (tp.tracked(ib)) tp.accumulate(ib, g.colwise().sum());
    });
  }
  same_shape(a, b, "add");
  Mat out = a.value() + b.value();
  return t->record(std::move(out), {ia, ib}, [ia, ib, self](Tape& tp) {
    const Mat& g = tp.node(self).grad;
    tp.accumulate(ia, g);
    tp.accumulate(ib, g);
  });
}

Var sub(const Var& a, const Var& b) {
  same_tape(a, b);
  same_shape(a, b, "sub");
  Tape* t = a.tape();
  const int ia = a.id(), ib = b.id();
  int self = static_cast<int>(t->size());
  Mat out = a.value() - b.value();
  return t->record(std::move(out), {ia, ib}, [ia, ib, self](Tape& tp) {
    const Mat& g = tp.node(self).grad;
    tp.accumulate(ia, g);
    if (tp.tracked(ib)) tp.accumulate(ib, -g);
  });
}

Var mul(const Var& a, const Var& b) {
  same_tape(a, b);
  same_shape(a, b, "mul");
  Tape* t = a.tape();
  const int ia = a.id(), ib = b.id();
  int self = static_cast<int>(t->size());
  Mat out = a.value().cwiseProduct(b.value());
  return t->record(std::move(out), {ia, ib}, [ia, ib, self](Tape& tp) {
    const Mat& g = tp.node(self).grad;
    if (tp.tracked(ia)) tp.accumulate(ia, g.cwiseProduct(tp.node(ib).value));
    if (tp.tracked(ib)) tp.accumulate(ib, g.cwiseProduct(tp.node(ia).value));
  });
}

Var scale(const Var& a, double s) {
  Tape* t = a.tape();
  const int ia = a.id();
  int self = static_cast<int>(t->size());
  return t->record(a.value() * s, {ia}, [ia, self, s](Tape& tp) { tp.accumulate(ia, tp.node(self).grad * s); });
}

Var relu(const Var& a) {
  Tape* t = a.tape();
  const int ia = a.id();
  int self = static_cast<int>(t->size());
  Mat out = a.value().cwiseMax(0.0);
  return t->record(std::move(out), {ia}, [ia, self](Tape& tp) {
    const Mat& x = tp.node(ia).value;
    tp.accumulate(ia, tp.node(self).grad.cwiseProduct((x.array() > 0.0).cast<double>().matrix()));
  });
}

Var tanh(const Var& a) {
  Tape* t = a.tape();
  const int ia = a.id();
  int self = static_cast<int>(t->size());
  Mat out = a.value().array().tanh().matrix();
  return t->record(std::move(out), {ia}, [ia, self](Tape& tp) {
    const Mat& y = tp.node(self).value;
    tp.accumulate(ia, tp.node(self).grad.cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Var log(const Var& a) {
  Tape* t = a.tape();
  const int ia = a.id();
  int self = static_cast<int>(t->size());
  Mat out = a.value().array().log().matrix();
  return t->record(std::move(out), {ia}, [ia, self](Tape& tp) {
    tp.accumulate(ia, tp.node(self).grad.cwiseQuotient(tp.node(ia).value));
  });
}

Var softmax_rows(const Var& a) {
  Tape* t = a.tape();
  const int ia = a.id();
  int self = static_cast<int>(t->size());
  const Mat& x = a.value();
  Mat y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double top = x.row(r).maxCoeff();
    if (top == kNegInf) fail(ErrorKind::ExhaustedActions, "softmax over a fully masked row");
    double total = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      y(r, c) = x(r, c) == kNegInf ? 0.0 : std::exp(x(r, c) - top);
      total += y(r, c);
    }
    y.row(r) /= total;
  }
  return t->record(std::move(y), {ia}, [ia, self](Tape& tp) {
    const Mat& y = tp.node(self).value;
    const Mat& g = tp.node(self).grad;
    Mat dx = y.cwiseProduct(g);
    const Eigen::VectorXd dot = dx.rowwise().sum();
    dx -= (y.array().colwise() * dot.array()).matrix();
    tp.accumulate(ia, dx);
  });
}

Var sum(const Var& a) {
  Tape* t = a.tape();
  const int ia = a.id();
  int self = static_cast<int>(t->size());
  Mat out = Mat::Constant(1, 1, a.value().sum());
  const auto r = a.rows(), c = a.cols();
  return t->record(std::move(out), {ia}, [ia, self, r, c](Tape& tp) {
    tp.accumulate(ia, Mat::Constant(r, c, tp.node(self).grad(0, 0)));
  });
}

Var mean(const Var& a) {
  if (a.value().size() == 0) fail(ErrorKind::Shape, "mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var mean_rows(const Var& a) {
  if (a.rows() == 0) fail(ErrorKind::Shape, "mean over zero rows");
  Tape* t = a.tape();
  const int ia = a.id();
  int self = static_cast<int>(t->size());
  const double inv = 1.0 / static_cast<double>(a.rows());
  Mat out = a.value().colwise().sum() * inv;
  const auto r = a.rows();
  return t->record(std::move(out), {ia}, [ia, self, r, inv](Tape& tp) {
    tp.accumulate(ia, tp.node(self).grad.replicate(r, 1) * inv);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorKind::Shape, "concat of nothing");
  Tape* t = parts.front().tape();
  Eigen::Index cols = 0;
  std::vector<int> ids;
  for (const auto& p : parts) {
    same_tape(parts.front(), p);
    if (p.rows() != parts.front().rows()) fail(ErrorKind::Shape, "concat_cols: row counts differ");
    cols += p.cols();
    ids.push_back(p.id());
  }
  Mat out(parts.front().rows(), cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  int self = static_cast<int>(t->size());
  return t->record(std::move(out), ids, [ids, offsets, self](Tape& tp) {
    const Mat& g = tp.node(self).grad;
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (tp.tracked(ids[i])) tp.accumulate(ids[i], g.middleCols(offsets[i], tp.node(ids[i]).value.cols()));
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorKind::Shape, "concat of nothing");
  Tape* t = parts.front().tape();
  Eigen::Index rows = 0;
  std::vector<int> ids;
  for (const auto& p : parts) {
    same_tape(parts.front(), p);
    if (p.cols() != parts.front().cols()) fail(ErrorKind::Shape, "concat_rows: column counts differ");
    rows += p.rows();
    ids.push_back(p.id());
  }
  Mat out(rows, parts.front().cols());
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  int self = static_cast<int>(t->size());
  return t->record(std::move(out), ids, [ids, offsets, self](Tape& tp) {
    const Mat& g = tp.node(self).grad;
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (tp.tracked(ids[i])) tp.accumulate(ids[i], g.middleRows(offsets[i], tp.node(ids[i]).value.rows()));
  });
}

Var slice_cols(const Var& a, Eigen::Index first, Eigen::Index count) {
  if (first < 0 || count < 0 || first + count > a.cols()) fail(ErrorKind::Shape, "slice_cols out of range");
  Tape* t = a.tape();
  const int ia = a.id();
  int self = static_cast<int>(t->size());
  const auto r = a.rows(), c = a.cols();
  return t->record(a.value().middleCols(first, count), {ia}, [ia, self, first, count, r, c](Tape& tp) {
    Mat g = Mat::Zero(r, c);
    g.middleCols(first, count) = tp.node(self).grad;
    tp.accumulate(ia, g);
  });
}

Var slice_rows(const Var& a, Eigen::Index first, Eigen::Index count) {
  if (first < 0 || count < 0 || first + count > a.rows()) fail(ErrorKind::Shape, "slice_rows out of range");
  Tape* t = a.tape();
  const int ia = a.id();
  int self = static_cast<int>(t->size());
  const auto r = a.rows(), c = a.cols();
  return t->record(a.value().middleRows(first, count), {ia}, [ia, self, first, count, r, c](Tape& tp) {
    Mat g = Mat::Zero(r, c);
    g.middleRows(first, count) = tp.node(self).grad;
    tp.accumulate(ia, g);
  });
}

Var gather_rows(const Var& a, const std::vector<Eigen::Index>& rows) {
  Tape* t = a.tape();
  const int ia = a.id();
  Mat out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) fail(ErrorKind::Shape, "gather_rows index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  int self = static_cast<int>(t->size());
  const auto r = a.rows(), c = a.cols();
  return t->record(std::move(out), {ia}, [ia, self, rows, r, c](Tape& tp) {
    const Mat& g = tp.node(self).grad;
    Mat d = Mat::Zero(r, c);
    for (std::size_t i = 0; i < rows.size(); ++i) d.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
    tp.accumulate(ia, d);
  });
}

Var masked_fill(const Var& a, const Mat& mask, double fill) {
  if (mask.rows() != a.rows() || mask.cols() != a.cols()) fail(ErrorKind::Shape, "mask shape differs");
  Tape* t = a.tape();
  const int ia = a.id();
  Mat out = a.value();
  for (Eigen::Index i = 0; i < out.size(); ++i)
    if (mask.data()[i] != 0.0) out.data()[i] = fill;
  int self = static_cast<int>(t->size());
  return t->record(std::move(out), {ia}, [ia, self, mask](Tape& tp) {
    Mat g = tp.node(self).grad;
    for (Eigen::Index i = 0; i < g.size(); ++i)
      if (mask.data()[i] != 0.0) g.data()[i] = 0.0;
    tp.accumulate(ia, g);
  });
}

Var transpose(const Var& a) {
  Tape* t = a.tape();
  const int ia = a.id();
  int self = static_cast<int>(t->size());
  return t->record(a.value().transpose(), {ia}, [ia, self](Tape& tp) {
    tp.accumulate(ia, tp.node(self).grad.transpose());
  });
}

Var element(const Var& a, Eigen::Index r, Eigen::Index c) {
  if (r < 0 || c < 0 || r >= a.rows() || c >= a.cols()) fail(ErrorKind::Shape, "element out of range");
  Tape* t = a.tape();
  const int ia = a.id();
  int self = static_cast<int>(t->size());
  const auto rows = a.rows(), cols = a.cols();
  return t->record(Mat::Constant(1, 1, a.value()(r, c)), {ia}, [ia, self, r, c, rows, cols](Tape& tp) {
    Mat g = Mat::Zero(rows, cols);
    g(r, c) = tp.node(self).grad(0, 0);
    tp.accumulate(ia, g);
  });
}

}  // namespace pdnrl::ad
