#include "attrdial/tensor.hpp"

#include <cmath>
#include <cstring>

#include "attrdial/error.hpp"

namespace attrdial {

Tensor2::Tensor2(int r, int c) : rows(r), cols(c) {
  if (r < 0 || c < 0) {
    throw DimensionError("Tensor2: negative shape " + std::to_string(r) + "x" +
                         std::to_string(c));
  }
  data.assign(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0);
}

Tensor2 Tensor2::full(int r, int c, double v) {
  Tensor2 t(r, c);
  t.fill(v);
  return t;
}

Tensor2 Tensor2::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  int r = static_cast<int>(rows.size());
  int c = r == 0 ? 0 : static_cast<int>(rows.begin()->size());
  Tensor2 t(r, c);
  int i = 0;
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != c) {
      throw DimensionError("Tensor2::from_rows: ragged rows");
    }
    int j = 0;
    for (double v : row) t.at(i, j++) = v;
    ++i;
  }
  return t;
}

Tensor2 Tensor2::row_vector(const std::vector<double>& v) {
  Tensor2 t(1, static_cast<int>(v.size()));
  t.data = v;
  return t;
}

std::string Tensor2::shape_str() const {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

void Tensor2::fill(double v) {
  for (double& x : data) x = v;
}

namespace {

void check_matmul(const Tensor2& a, const Tensor2& b, int am, int an, int bm,
                  int bn, const char* op) {
  (void)am;
  (void)bn;
  if (an != bm) {
    throw DimensionError(std::string(op) + ": inner dimensions differ, " +
                         a.shape_str() + " vs " + b.shape_str());
  }
}

void prep_out(Tensor2& out, int r, int c, bool accumulate, const char* op) {
  if (accumulate) {
    if (out.rows != r || out.cols != c) {
      throw DimensionError(std::string(op) + ": accumulate target is " +
                           out.shape_str() + ", expected " + std::to_string(r) +
                           "x" + std::to_string(c));
    }
  } else if (out.rows != r || out.cols != c) {
    out = Tensor2(r, c);
  } else {
    std::memset(out.data.data(), 0, out.size() * sizeof(double));
  }
}

}  // namespace

void matmul_into(const Tensor2& a, const Tensor2& b, Tensor2& out, bool accumulate) {
  check_matmul(a, b, a.rows, a.cols, b.rows, b.cols, "matmul");
  prep_out(out, a.rows, b.cols, accumulate, "matmul");
  const int n = b.cols;
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row(i);
    double* orow = out.row(i);
    for (int k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.row(k);
      for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
}

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  Tensor2 out;
  matmul_into(a, b, out);
  return out;
}

void matmul_at_b_into(const Tensor2& a, const Tensor2& b, Tensor2& out, bool accumulate) {
  // out[k,j] = sum_i a[i,k] * b[i,j]
  if (a.rows != b.rows) {
    throw DimensionError("matmul_at_b: row counts differ, " + a.shape_str() +
                         " vs " + b.shape_str());
  }
  prep_out(out, a.cols, b.cols, accumulate, "matmul_at_b");
  const int n = b.cols;
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row(i);
    const double* brow = b.row(i);
    for (int k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      double* orow = out.row(k);
      for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
}

void matmul_a_bt_into(const Tensor2& a, const Tensor2& b, Tensor2& out, bool accumulate) {
  // out[i,j] = dot(a[i,:], b[j,:])
  if (a.cols != b.cols) {
    throw DimensionError("matmul_a_bt: column counts differ, " + a.shape_str() +
                         " vs " + b.shape_str());
  }
  prep_out(out, a.rows, b.rows, accumulate, "matmul_a_bt");
  const int n = a.cols;
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row(i);
    double* orow = out.row(i);
    for (int j = 0; j < b.rows; ++j) {
      const double* brow = b.row(j);
      double s = 0.0;
      for (int k = 0; k < n; ++k) s += arow[k] * brow[k];
      orow[j] += s;
    }
  }
}

Tensor2 transpose(const Tensor2& a) {
  Tensor2 t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i) {
    for (int j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
  }
  return t;
}

void add_row_vector_inplace(Tensor2& x, const Tensor2& b) {
  if (b.rows != 1 || b.cols != x.cols) {
    throw DimensionError("add_row_vector: bias is " + b.shape_str() +
                         ", expected 1x" + std::to_string(x.cols));
  }
  const double* brow = b.row(0);
  for (int i = 0; i < x.rows; ++i) {
    double* xrow = x.row(i);
    for (int j = 0; j < x.cols; ++j) xrow[j] += brow[j];
  }
}

void axpy(double alpha, const Tensor2& x, Tensor2& y) {
  require_same_shape(x, y, "axpy");
  for (size_t i = 0; i < x.size(); ++i) y.data[i] += alpha * x.data[i];
}

void scale_inplace(Tensor2& x, double alpha) {
  for (double& v : x.data) v *= alpha;
}

void add_inplace(Tensor2& y, const Tensor2& x) {
  require_same_shape(x, y, "add_inplace");
  for (size_t i = 0; i < x.size(); ++i) y.data[i] += x.data[i];
}

Tensor2 add(const Tensor2& a, const Tensor2& b) {
  require_same_shape(a, b, "add");
  Tensor2 out = a;
  add_inplace(out, b);
  return out;
}

Tensor2 sub(const Tensor2& a, const Tensor2& b) {
  require_same_shape(a, b, "sub");
  Tensor2 out = a;
  for (size_t i = 0; i < b.size(); ++i) out.data[i] -= b.data[i];
  return out;
}

Tensor2 hadamard(const Tensor2& a, const Tensor2& b) {
  require_same_shape(a, b, "hadamard");
  Tensor2 out = a;
  for (size_t i = 0; i < b.size(); ++i) out.data[i] *= b.data[i];
  return out;
}

Tensor2 column_sums(const Tensor2& x) {
  Tensor2 out(1, x.cols);
  for (int i = 0; i < x.rows; ++i) {
    const double* xrow = x.row(i);
    for (int j = 0; j < x.cols; ++j) out.data[j] += xrow[j];
  }
  return out;
}

double frob_norm_sq(const Tensor2& x) {
  double s = 0.0;
  for (double v : x.data) s += v * v;
  return s;
}

bool all_finite(const Tensor2& x) {
  for (double v : x.data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_finite(const Tensor2& x, const std::string& what) {
  if (!all_finite(x)) {
    throw TrainingDivergenceError("non-finite values in " + what);
  }
}

void require_same_shape(const Tensor2& a, const Tensor2& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shapes differ, " + a.shape_str() +
                         " vs " + b.shape_str());
  }
}

}  // namespace attrdial
