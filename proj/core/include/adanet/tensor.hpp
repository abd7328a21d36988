#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace adanet {

using Shape = std::vector<int>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

// One node of the reverse-mode computation graph. Dense row-major
// doubles; grad has the same length as data and starts zeroed.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  std::string op;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backfn;
  bool requires_grad = true;

  std::size_t size() const { return data.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
  bool is_scalar() const { return data.size() == 1; }
  double item() const;
};

using Value = std::shared_ptr<Node>;

// Leaf constructors.
Value make_value(Shape shape, std::vector<double> data, bool requires_grad = true,
                 const char* op = "leaf");
Value make_zeros(Shape shape, bool requires_grad = true);
Value make_scalar(double v, bool requires_grad = false);
Value make_const(Shape shape, std::vector<double> data);  // requires_grad = false

// Elementwise / broadcast arithmetic. add and sub accept equal shapes,
// a scalar right operand, or a 2-D left with a 1-D row-vector right.
// mul accepts equal shapes or a scalar on either side.
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value scale(const Value& a, double k);
Value affine(const Value& a, double k, double c);  // k*a + c

Value matmul(const Value& a, const Value& b);

Value relu(const Value& a);
Value sigmoid(const Value& a);
Value tanh_v(const Value& a);

Value sum_all(const Value& a);
Value mean_all(const Value& a);
// axis 0 pools over rows (result [cols]); axis 1 over columns (result [rows]).
Value sum_axis(const Value& a, int axis);
Value mean_axis(const Value& a, int axis);

// Concatenate along the leading axis (1-D vectors or stacks of rows).
Value concat(const std::vector<Value>& parts);
// Concatenate 2-D blocks along columns (equal row counts).
Value concat_cols(const std::vector<Value>& parts);

// Zero-mean unit-variance normalization of a 1-D vector.
Value standardize(const Value& v, double eps = 1e-6);

Value softmax_rows(const Value& a);
// v of length n -> n x n matrix with entry (i,j) = |v_i - v_j|.
Value abs_pairwise_diff(const Value& v);

Value reshape(const Value& a, Shape shape);
// Scalar pick from a 1-D vector; gradient scatters back to position i.
Value at(const Value& v, int i);
// Row i of mat scaled by w[i].
Value scale_rows(const Value& mat, const Value& w);
Value gather_rows(const Value& mat, const std::vector<int>& idx);
// Place rows[k] at row idx[k] of an n_rows output; untouched rows are zero.
Value scatter_rows(const Value& rows, const std::vector<int>& idx, int n_rows);

// Mean binary cross-entropy over all entries; targets is a constant.
Value bce_with_logits(const Value& logits, const Value& targets);
// Multi-class cross-entropy for a 1-D logit vector against an index label.
Value ce_with_logits(const Value& logits, int label);

// Straight-through rounding: forward rounds half-up, backward is identity.
Value st_round(const Value& w);
// Forward emits the given hard values, backward copies gradients onto soft.
Value st_hard(const Value& soft, std::vector<double> hard);

// Reverse-mode sweep from a scalar loss; grads accumulate additively.
void backward(const Value& loss);

}  // namespace adanet
