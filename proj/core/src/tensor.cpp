#include "adanet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace adanet {

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

double Node::item() const {
  if (data.size() != 1)
    throw std::invalid_argument("item: value is not scalar, shape " + shape_str(shape));
  return data[0];
}

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) +
                              " vs " + shape_str(b));
}

Value new_node(Shape shape, const char* op, std::vector<Value> parents) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data.assign(numel(n->shape), 0.0);
  n->grad.assign(n->data.size(), 0.0);
  n->op = op;
  n->parents = std::move(parents);
  n->requires_grad = false;
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  return n;
}

// Row-vector broadcast: a is [R,C], b is [C].
bool rowvec_case(const Value& a, const Value& b) {
  return a->shape.size() == 2 && b->shape.size() == 1 && b->shape[0] == a->shape[1];
}

}  // namespace

Value make_value(Shape shape, std::vector<double> data, bool requires_grad, const char* op) {
  if (data.size() != numel(shape))
    throw std::invalid_argument(std::string(op) + ": data length " +
                                std::to_string(data.size()) + " does not match shape " +
                                shape_str(shape));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->grad.assign(n->data.size(), 0.0);
  n->op = op;
  n->requires_grad = requires_grad;
  return n;
}

Value make_zeros(Shape shape, bool requires_grad) {
  std::vector<double> d(numel(shape), 0.0);
  return make_value(std::move(shape), std::move(d), requires_grad);
}

Value make_scalar(double v, bool requires_grad) {
  return make_value({1}, {v}, requires_grad, "scalar");
}

Value make_const(Shape shape, std::vector<double> data) {
  return make_value(std::move(shape), std::move(data), false, "const");
}

Value add(const Value& a, const Value& b) {
  Value out;
  if (a->shape == b->shape) {
    out = new_node(a->shape, "add", {a, b});
    for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = a->data[i] + b->data[i];
    Node* o = out.get();
    out->backfn = [o] {
      for (std::size_t i = 0; i < o->size(); ++i) {
        o->parents[0]->grad[i] += o->grad[i];
        o->parents[1]->grad[i] += o->grad[i];
      }
    };
  } else if (b->is_scalar()) {
    out = new_node(a->shape, "add", {a, b});
    for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = a->data[i] + b->data[0];
    Node* o = out.get();
    out->backfn = [o] {
      for (std::size_t i = 0; i < o->size(); ++i) {
        o->parents[0]->grad[i] += o->grad[i];
        o->parents[1]->grad[0] += o->grad[i];
      }
    };
  } else if (rowvec_case(a, b)) {
    out = new_node(a->shape, "add", {a, b});
    int rows = a->shape[0], cols = a->shape[1];
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        out->data[r * cols + c] = a->data[r * cols + c] + b->data[c];
    Node* o = out.get();
    out->backfn = [o, rows, cols] {
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
          o->parents[0]->grad[r * cols + c] += o->grad[r * cols + c];
          o->parents[1]->grad[c] += o->grad[r * cols + c];
        }
    };
  } else {
    shape_error("add", a->shape, b->shape);
  }
  return out;
}

Value sub(const Value& a, const Value& b) {
  Value out;
  if (a->shape == b->shape) {
    out = new_node(a->shape, "sub", {a, b});
    for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = a->data[i] - b->data[i];
    Node* o = out.get();
    out->backfn = [o] {
      for (std::size_t i = 0; i < o->size(); ++i) {
        o->parents[0]->grad[i] += o->grad[i];
        o->parents[1]->grad[i] -= o->grad[i];
      }
    };
  } else if (b->is_scalar()) {
    out = new_node(a->shape, "sub", {a, b});
    for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = a->data[i] - b->data[0];
    Node* o = out.get();
    out->backfn = [o] {
      for (std::size_t i = 0; i < o->size(); ++i) {
        o->parents[0]->grad[i] += o->grad[i];
        o->parents[1]->grad[0] -= o->grad[i];
      }
    };
  } else if (rowvec_case(a, b)) {
    out = new_node(a->shape, "sub", {a, b});
    int rows = a->shape[0], cols = a->shape[1];
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        out->data[r * cols + c] = a->data[r * cols + c] - b->data[c];
    Node* o = out.get();
    out->backfn = [o, rows, cols] {
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
          o->parents[0]->grad[r * cols + c] += o->grad[r * cols + c];
          o->parents[1]->grad[c] -= o->grad[r * cols + c];
        }
    };
  } else {
    shape_error("sub", a->shape, b->shape);
  }
  return out;
}

Value mul(const Value& a, const Value& b) {
  if (a->shape != b->shape && !a->is_scalar() && !b->is_scalar())
    shape_error("mul", a->shape, b->shape);
  if (a->is_scalar() && !b->is_scalar()) return mul(b, a);
  Value out;
  if (b->is_scalar() && !a->is_scalar()) {
    out = new_node(a->shape, "mul", {a, b});
    for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = a->data[i] * b->data[0];
    Node* o = out.get();
    out->backfn = [o] {
      for (std::size_t i = 0; i < o->size(); ++i) {
        o->parents[0]->grad[i] += o->grad[i] * o->parents[1]->data[0];
        o->parents[1]->grad[0] += o->grad[i] * o->parents[0]->data[i];
      }
    };
  } else {
    out = new_node(a->shape, "mul", {a, b});
    for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = a->data[i] * b->data[i];
    Node* o = out.get();
    out->backfn = [o] {
      for (std::size_t i = 0; i < o->size(); ++i) {
        o->parents[0]->grad[i] += o->grad[i] * o->parents[1]->data[i];
        o->parents[1]->grad[i] += o->grad[i] * o->parents[0]->data[i];
      }
    };
  }
  return out;
}

Value scale(const Value& a, double k) { return affine(a, k, 0.0); }

Value affine(const Value& a, double k, double c) {
  Value out = new_node(a->shape, "affine", {a});
  for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = k * a->data[i] + c;
  Node* o = out.get();
  out->backfn = [o, k] {
    for (std::size_t i = 0; i < o->size(); ++i) o->parents[0]->grad[i] += k * o->grad[i];
  };
  return out;
}

Value matmul(const Value& a, const Value& b) {
  if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
    shape_error("matmul", a->shape, b->shape);
  int m = a->shape[0], k = a->shape[1], n = b->shape[1];
  Value out = new_node({m, n}, "matmul", {a, b});
  const double* A = a->data.data();
  const double* B = b->data.data();
  double* C = out->data.data();
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B + p * n;
      double* crow = C + i * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  Node* o = out.get();
  out->backfn = [o, m, k, n] {
    const double* G = o->grad.data();
    const double* A = o->parents[0]->data.data();
    const double* B = o->parents[1]->data.data();
    double* dA = o->parents[0]->grad.data();
    double* dB = o->parents[1]->grad.data();
    if (o->parents[0]->requires_grad) {
      // dA = G * B^T
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          double g = G[i * n + j];
          if (g == 0.0) continue;
          for (int p = 0; p < k; ++p) dA[i * k + p] += g * B[p * n + j];
        }
    }
    if (o->parents[1]->requires_grad) {
      // dB = A^T * G
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          double av = A[i * k + p];
          if (av == 0.0) continue;
          const double* grow = G + i * n;
          double* brow = dB + p * n;
          for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
        }
    }
  };
  return out;
}

Value relu(const Value& a) {
  Value out = new_node(a->shape, "relu", {a});
  for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = a->data[i] > 0 ? a->data[i] : 0.0;
  Node* o = out.get();
  out->backfn = [o] {
    for (std::size_t i = 0; i < o->size(); ++i)
      if (o->parents[0]->data[i] > 0) o->parents[0]->grad[i] += o->grad[i];
  };
  return out;
}

Value sigmoid(const Value& a) {
  Value out = new_node(a->shape, "sigmoid", {a});
  for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = 1.0 / (1.0 + std::exp(-a->data[i]));
  Node* o = out.get();
  out->backfn = [o] {
    for (std::size_t i = 0; i < o->size(); ++i) {
      double s = o->data[i];
      o->parents[0]->grad[i] += o->grad[i] * s * (1.0 - s);
    }
  };
  return out;
}

Value tanh_v(const Value& a) {
  Value out = new_node(a->shape, "tanh", {a});
  for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = std::tanh(a->data[i]);
  Node* o = out.get();
  out->backfn = [o] {
    for (std::size_t i = 0; i < o->size(); ++i) {
      double t = o->data[i];
      o->parents[0]->grad[i] += o->grad[i] * (1.0 - t * t);
    }
  };
  return out;
}

Value sum_all(const Value& a) {
  Value out = new_node({1}, "sum_all", {a});
  double s = 0;
  for (double v : a->data) s += v;
  out->data[0] = s;
  Node* o = out.get();
  out->backfn = [o] {
    for (std::size_t i = 0; i < o->parents[0]->size(); ++i)
      o->parents[0]->grad[i] += o->grad[0];
  };
  return out;
}

Value mean_all(const Value& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a->size())); }

Value sum_axis(const Value& a, int axis) {
  if (a->shape.size() != 2 || (axis != 0 && axis != 1))
    throw std::invalid_argument("sum_axis: need a 2-D value and axis 0/1, got shape " +
                                shape_str(a->shape) + " axis " + std::to_string(axis));
  int rows = a->shape[0], cols = a->shape[1];
  Value out = new_node({axis == 0 ? cols : rows}, "sum_axis", {a});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out->data[axis == 0 ? c : r] += a->data[r * cols + c];
  Node* o = out.get();
  out->backfn = [o, rows, cols, axis] {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        o->parents[0]->grad[r * cols + c] += o->grad[axis == 0 ? c : r];
  };
  return out;
}

Value mean_axis(const Value& a, int axis) {
  Value s = sum_axis(a, axis);
  double n = static_cast<double>(axis == 0 ? a->shape[0] : a->shape[1]);
  return scale(s, 1.0 / n);
}

Value concat(const std::vector<Value>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no operands");
  Shape trailing(parts[0]->shape.begin() + 1, parts[0]->shape.end());
  int lead = 0;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape t(p->shape.begin() + 1, p->shape.end());
    if (p->shape.size() != parts[0]->shape.size() || t != trailing)
      shape_error("concat", parts[0]->shape, p->shape);
    lead += p->shape[0];
    total += p->size();
  }
  Shape out_shape = parts[0]->shape;
  out_shape[0] = lead;
  Value out = new_node(out_shape, "concat", parts);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p->data.begin(), p->data.end(), out->data.begin() + off);
    off += p->size();
  }
  Node* o = out.get();
  out->backfn = [o] {
    std::size_t off = 0;
    for (auto& p : o->parents) {
      for (std::size_t i = 0; i < p->size(); ++i) p->grad[i] += o->grad[off + i];
      off += p->size();
    }
  };
  return out;
}

Value concat_cols(const std::vector<Value>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no operands");
  int rows = parts[0]->shape[0];
  int cols = 0;
  for (const auto& p : parts) {
    if (p->shape.size() != 2 || p->shape[0] != rows)
      shape_error("concat_cols", parts[0]->shape, p->shape);
    cols += p->shape[1];
  }
  Value out = new_node({rows, cols}, "concat_cols", parts);
  int coff = 0;
  for (const auto& p : parts) {
    int pc = p->shape[1];
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < pc; ++c) out->data[r * cols + coff + c] = p->data[r * pc + c];
    coff += pc;
  }
  Node* o = out.get();
  out->backfn = [o, rows, cols] {
    int coff = 0;
    for (auto& p : o->parents) {
      int pc = p->shape[1];
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < pc; ++c) p->grad[r * pc + c] += o->grad[r * cols + coff + c];
      coff += pc;
    }
  };
  return out;
}

Value softmax_rows(const Value& a) {
  if (a->shape.size() != 2)
    throw std::invalid_argument("softmax_rows: need a 2-D value, got " + shape_str(a->shape));
  int rows = a->shape[0], cols = a->shape[1];
  Value out = new_node(a->shape, "softmax_rows", {a});
  for (int r = 0; r < rows; ++r) {
    const double* x = a->data.data() + r * cols;
    double* y = out->data.data() + r * cols;
    double mx = *std::max_element(x, x + cols);
    double z = 0;
    for (int c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      z += y[c];
    }
    for (int c = 0; c < cols; ++c) y[c] /= z;
  }
  Node* o = out.get();
  out->backfn = [o, rows, cols] {
    for (int r = 0; r < rows; ++r) {
      const double* p = o->data.data() + r * cols;
      const double* g = o->grad.data() + r * cols;
      double dot = 0;
      for (int c = 0; c < cols; ++c) dot += p[c] * g[c];
      for (int c = 0; c < cols; ++c) o->parents[0]->grad[r * cols + c] += p[c] * (g[c] - dot);
    }
  };
  return out;
}

Value abs_pairwise_diff(const Value& v) {
  if (v->shape.size() != 1)
    throw std::invalid_argument("abs_pairwise_diff: need a 1-D value, got " + shape_str(v->shape));
  int n = v->shape[0];
  Value out = new_node({n, n}, "abs_pairwise_diff", {v});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out->data[i * n + j] = std::abs(v->data[i] - v->data[j]);
  Node* o = out.get();
  out->backfn = [o, n] {
    // subgradient 0 at exact ties
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double d = o->parents[0]->data[i] - o->parents[0]->data[j];
        double s = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
        o->parents[0]->grad[i] += s * o->grad[i * n + j];
        o->parents[0]->grad[j] -= s * o->grad[i * n + j];
      }
  };
  return out;
}

Value standardize(const Value& v, double eps) {
  if (v->shape.size() != 1)
    throw std::invalid_argument("standardize: need a 1-D value, got " + shape_str(v->shape));
  int n = v->shape[0];
  double mu = 0.0;
  for (double x : v->data) mu += x;
  mu /= n;
  double var = 0.0;
  for (double x : v->data) var += (x - mu) * (x - mu);
  var /= n;
  double sigma = std::sqrt(var + eps);
  Value out = new_node({n}, "standardize", {v});
  for (int i = 0; i < n; ++i) out->data[i] = (v->data[i] - mu) / sigma;
  Node* o = out.get();
  out->backfn = [o, n, sigma] {
    // dx = (g - mean(g) - y*mean(g.*y)) / sigma
    double gm = 0.0, gym = 0.0;
    for (int i = 0; i < n; ++i) {
      gm += o->grad[i];
      gym += o->grad[i] * o->data[i];
    }
    gm /= n;
    gym /= n;
    for (int i = 0; i < n; ++i)
      o->parents[0]->grad[i] += (o->grad[i] - gm - o->data[i] * gym) / sigma;
  };
  return out;
}

Value reshape(const Value& a, Shape shape) {
  if (numel(shape) != a->size())
    shape_error("reshape", a->shape, shape);
  Value out = new_node(shape, "reshape", {a});
  out->data = a->data;
  Node* o = out.get();
  out->backfn = [o] {
    for (std::size_t i = 0; i < o->size(); ++i) o->parents[0]->grad[i] += o->grad[i];
  };
  return out;
}

Value at(const Value& v, int i) {
  if (v->shape.size() != 1 || i < 0 || i >= v->shape[0])
    throw std::invalid_argument("at: index " + std::to_string(i) + " outside 1-D value " +
                                shape_str(v->shape));
  Value out = new_node({1}, "at", {v});
  out->data[0] = v->data[i];
  Node* o = out.get();
  out->backfn = [o, i] { o->parents[0]->grad[i] += o->grad[0]; };
  return out;
}

Value scale_rows(const Value& mat, const Value& w) {
  if (mat->shape.size() != 2 || w->shape.size() != 1 || w->shape[0] != mat->shape[0])
    shape_error("scale_rows", mat->shape, w->shape);
  int rows = mat->shape[0], cols = mat->shape[1];
  Value out = new_node(mat->shape, "scale_rows", {mat, w});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out->data[r * cols + c] = mat->data[r * cols + c] * w->data[r];
  Node* o = out.get();
  out->backfn = [o, rows, cols] {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        o->parents[0]->grad[r * cols + c] += o->grad[r * cols + c] * o->parents[1]->data[r];
        o->parents[1]->grad[r] += o->grad[r * cols + c] * o->parents[0]->data[r * cols + c];
      }
  };
  return out;
}

Value gather_rows(const Value& mat, const std::vector<int>& idx) {
  if (mat->shape.size() != 2)
    throw std::invalid_argument("gather_rows: need a 2-D value, got " + shape_str(mat->shape));
  int cols = mat->shape[1];
  Value out = new_node({static_cast<int>(idx.size()), cols}, "gather_rows", {mat});
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= mat->shape[0])
      throw std::invalid_argument("gather_rows: row index out of range");
    std::copy_n(mat->data.begin() + idx[k] * cols, cols, out->data.begin() + k * cols);
  }
  Node* o = out.get();
  out->backfn = [o, idx, cols] {
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (int c = 0; c < cols; ++c)
        o->parents[0]->grad[idx[k] * cols + c] += o->grad[k * cols + c];
  };
  return out;
}

Value scatter_rows(const Value& rows, const std::vector<int>& idx, int n_rows) {
  if (rows->shape.size() != 2 || static_cast<std::size_t>(rows->shape[0]) != idx.size())
    throw std::invalid_argument("scatter_rows: row count does not match index list");
  int cols = rows->shape[1];
  Value out = new_node({n_rows, cols}, "scatter_rows", {rows});
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= n_rows)
      throw std::invalid_argument("scatter_rows: row index out of range");
    std::copy_n(rows->data.begin() + k * cols, cols, out->data.begin() + idx[k] * cols);
  }
  Node* o = out.get();
  out->backfn = [o, idx, cols] {
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (int c = 0; c < cols; ++c)
        o->parents[0]->grad[k * cols + c] += o->grad[idx[k] * cols + c];
  };
  return out;
}

Value bce_with_logits(const Value& logits, const Value& targets) {
  if (logits->shape != targets->shape)
    shape_error("bce_with_logits", logits->shape, targets->shape);
  Value out = new_node({1}, "bce_with_logits", {logits, targets});
  double n = static_cast<double>(logits->size());
  double loss = 0;
  for (std::size_t i = 0; i < logits->size(); ++i) {
    double x = logits->data[i], t = targets->data[i];
    loss += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
  }
  out->data[0] = loss / n;
  Node* o = out.get();
  out->backfn = [o, n] {
    for (std::size_t i = 0; i < o->parents[0]->size(); ++i) {
      double x = o->parents[0]->data[i], t = o->parents[1]->data[i];
      double s = 1.0 / (1.0 + std::exp(-x));
      o->parents[0]->grad[i] += o->grad[0] * (s - t) / n;
    }
  };
  return out;
}

Value ce_with_logits(const Value& logits, int label) {
  if (logits->shape.size() != 1)
    throw std::invalid_argument("ce_with_logits: need a 1-D value, got " + shape_str(logits->shape));
  int c = logits->shape[0];
  if (label < 0 || label >= c)
    throw std::invalid_argument("ce_with_logits: label " + std::to_string(label) +
                                " outside [0," + std::to_string(c) + ")");
  Value out = new_node({1}, "ce_with_logits", {logits});
  double mx = *std::max_element(logits->data.begin(), logits->data.end());
  double z = 0;
  for (double v : logits->data) z += std::exp(v - mx);
  out->data[0] = std::log(z) + mx - logits->data[label];
  Node* o = out.get();
  out->backfn = [o, label, mx, z, c] {
    for (int i = 0; i < c; ++i) {
      double p = std::exp(o->parents[0]->data[i] - mx) / z;
      o->parents[0]->grad[i] += o->grad[0] * (p - (i == label ? 1.0 : 0.0));
    }
  };
  return out;
}

Value st_round(const Value& w) {
  Value out = new_node(w->shape, "st_round", {w});
  for (std::size_t i = 0; i < out->size(); ++i)
    out->data[i] = std::floor(w->data[i] + 0.5);
  Node* o = out.get();
  out->backfn = [o] {
    for (std::size_t i = 0; i < o->size(); ++i) o->parents[0]->grad[i] += o->grad[i];
  };
  return out;
}

Value st_hard(const Value& soft, std::vector<double> hard) {
  if (hard.size() != soft->size())
    throw std::invalid_argument("st_hard: hard values length does not match soft value");
  Value out = new_node(soft->shape, "st_hard", {soft});
  out->data = std::move(hard);
  Node* o = out.get();
  out->backfn = [o] {
    for (std::size_t i = 0; i < o->size(); ++i) o->parents[0]->grad[i] += o->grad[i];
  };
  return out;
}

void backward(const Value& loss) {
  if (!loss->is_scalar())
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss->shape));
  // iterative post-order DFS for the topological order
  std::vector<Node*> topo;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }
  loss->grad[0] = 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it)
    if ((*it)->requires_grad && (*it)->backfn) (*it)->backfn();
  // gradient isolation: values that do not require grad end the sweep
  // with exactly zero gradient even when a child wrote into them
  for (Node* node : topo)
    if (!node->requires_grad) node->zero_grad();
}

}  // namespace adanet
