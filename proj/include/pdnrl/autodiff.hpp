#pragma once

// Reverse-mode differentiation over dense row-major double matrices.
//
// A Tape records every operation as a node holding its value, its gradient
// and a closure that pushes the gradient to its inputs. Var is a handle
// (tape, node index). Parameters live outside any tape; bind them with
// Tape::param() and their gradient is added into Parameter::grad by every
// backward() call until it is zeroed.

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pdnrl::ad {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Parameter {
  std::string name;
  Mat value;
  Mat grad;

  Parameter() = default;
  Parameter(std::string n, Mat v) : name(std::move(n)), value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())) {}
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Mat& value() const;
  const Mat& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Untracked value; never receives a gradient.
  Var constant(Mat value);
  // Tracked input; its gradient accumulates across backward() calls.
  Var leaf(Mat value);
  Var param(Parameter& p);

  // Requires a 1x1 tracked loss; throws Contract otherwise.
  void backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }

  // Used by the operations below.
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Tape&)> push;
    Parameter* param = nullptr;
    bool tracked = false;
    bool leaf = false;
  };
  Var record(Mat value, std::vector<int> inputs, std::function<void(Tape&)> push);
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  bool tracked(int id) const { return node(id).tracked; }
  // grad(id) += g, allocating on first use.
  void accumulate(int id, const Mat& g);

 private:
  std::vector<Node> nodes_;
};

Var matmul(const Var& a, const Var& b);
// a * b^T
Var matmul_nt(const Var& a, const Var& b);
// Same shape, or b a single row broadcast over a's rows.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var relu(const Var& a);
Var tanh(const Var& a);
Var log(const Var& a);
// Row-wise softmax; -inf entries come out as exact zeros.
Var softmax_rows(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
// 1 x cols mean over rows.
Var mean_rows(const Var& a);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Eigen::Index first, Eigen::Index count);
Var slice_rows(const Var& a, Eigen::Index first, Eigen::Index count);
Var gather_rows(const Var& a, const std::vector<Eigen::Index>& rows);
// Entries where mask is nonzero are replaced by `fill`; they pass no gradient.
Var masked_fill(const Var& a, const Mat& mask, double fill);
Var transpose(const Var& a);
Var element(const Var& a, Eigen::Index r, Eigen::Index c);

}  // namespace pdnrl::ad
