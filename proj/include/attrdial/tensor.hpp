// Dense row-major 2-D tensor of doubles plus the checked linear algebra the
// model layers are built from. Every public operation validates shapes and
// raises DimensionError naming both operands on mismatch.
#pragma once

#include <initializer_list>
#include <string>
#include <vector>

namespace attrdial {

struct Tensor2 {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;  // row-major, rows*cols entries

  Tensor2() = default;
  Tensor2(int r, int c);

  static Tensor2 zeros(int r, int c) { return Tensor2(r, c); }
  static Tensor2 full(int r, int c, double v);
  static Tensor2 from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor2 row_vector(const std::vector<double>& v);

  double* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }
  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  size_t size() const { return data.size(); }
  bool same_shape(const Tensor2& o) const { return rows == o.rows && cols == o.cols; }
  std::string shape_str() const;
  void fill(double v);
};

// out = a . b (accumulate=true adds into out instead of overwriting).
void matmul_into(const Tensor2& a, const Tensor2& b, Tensor2& out, bool accumulate = false);
Tensor2 matmul(const Tensor2& a, const Tensor2& b);
// out = a^T . b
void matmul_at_b_into(const Tensor2& a, const Tensor2& b, Tensor2& out, bool accumulate = false);
// out = a . b^T
void matmul_a_bt_into(const Tensor2& a, const Tensor2& b, Tensor2& out, bool accumulate = false);

Tensor2 transpose(const Tensor2& a);

// x[i,:] += b[0,:] for every row i; b must be 1 x cols.
void add_row_vector_inplace(Tensor2& x, const Tensor2& b);
// y += alpha * x
void axpy(double alpha, const Tensor2& x, Tensor2& y);
void scale_inplace(Tensor2& x, double alpha);
void add_inplace(Tensor2& y, const Tensor2& x);
Tensor2 add(const Tensor2& a, const Tensor2& b);
Tensor2 sub(const Tensor2& a, const Tensor2& b);
// Elementwise product.
Tensor2 hadamard(const Tensor2& a, const Tensor2& b);

// 1 x cols vector of column sums.
Tensor2 column_sums(const Tensor2& x);

double frob_norm_sq(const Tensor2& x);

bool all_finite(const Tensor2& x);
// Throws TrainingDivergenceError mentioning `what` if any entry is NaN/Inf.
void require_finite(const Tensor2& x, const std::string& what);

void require_same_shape(const Tensor2& a, const Tensor2& b, const char* op);

}  // namespace attrdial
