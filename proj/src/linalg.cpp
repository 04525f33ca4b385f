#include "pbr/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "pbr/binio.hpp"
#include "pbr/random.hpp"

namespace pbr {

double squared_l2(FloatSpan a, FloatSpan b) {
  require_same_dim(a.size(), b.size(), "squared_l2");
  return squared_l2_unchecked(a.data(), b.data(), a.size());
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix DenseMatrix::transposed() const {
  DenseMatrix t(cols, rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t(c, r) = (*this)(r, c);
  return t;
}

DenseMatrix DenseMatrix::operator*(const DenseMatrix& rhs) const {
  require_same_dim(cols, rhs.rows, "matrix product");
  DenseMatrix out(rows, rhs.cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < cols; ++k) {
      const double a = (*this)(r, k);
      if (a == 0.0) continue;
      for (std::size_t c = 0; c < rhs.cols; ++c) out(r, c) += a * rhs(k, c);
    }
  }
  return out;
}

double orthonormality_error(const DenseMatrix& a) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < a.rows; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < a.cols; ++c) dot += a(i, c) * a(j, c);
      worst = std::max(worst, std::abs(dot - (i == j ? 1.0 : 0.0)));
    }
  }
  return worst;
}

namespace {

void normalize_sign(std::span<double> v) {
  for (double x : v) {
    if (std::abs(x) > 1e-12) {
      if (x < 0.0) {
        for (double& y : v) y = -y;
      }
      return;
    }
  }
}

// Modified Gram-Schmidt on the rows of `m`, in place. Rows that collapse are
// replaced by the first standard basis vector still independent of the
// previous rows.
void orthonormalize_rows(DenseMatrix& m, std::size_t valid_rows) {
  const std::size_t n = m.cols;
  auto project_out = [&](std::span<double> v, std::size_t upto) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t j = 0; j < upto; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < n; ++c) dot += v[c] * m(j, c);
        for (std::size_t c = 0; c < n; ++c) v[c] -= dot * m(j, c);
      }
    }
  };
  auto norm = [&](std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };
  std::size_t next_basis = 0;
  for (std::size_t i = 0; i < m.rows; ++i) {
    std::span<double> row(m.values.data() + i * n, n);
    double len = 0.0;
    if (i < valid_rows) {
      project_out(row, i);
      len = norm(row);
    }
    while (len < 1e-8) {
      std::fill(row.begin(), row.end(), 0.0);
      row[next_basis++ % n] = 1.0;
      project_out(row, i);
      len = norm(row);
    }
    for (double& x : row) x /= len;
  }
}

}  // namespace

EigenDecomposition symmetric_eigen(const DenseMatrix& symmetric, double tolerance, int max_sweeps) {
  require(symmetric.rows == symmetric.cols, "symmetric_eigen: matrix must be square");
  const std::size_t n = symmetric.rows;
  DenseMatrix a = symmetric;
  DenseMatrix v = DenseMatrix::identity(n);
  double scale = 0.0;
  for (double x : a.values) scale += x * x;
  scale = std::max(1.0, std::sqrt(scale));

  EigenDecomposition out;
  for (out.sweeps = 0; out.sweeps < max_sweeps; ++out.sweeps) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(2.0 * off) <= tolerance * scale) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
  out.values.resize(n);
  out.vectors = DenseMatrix(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t col = order[r];
    out.values[r] = a(col, col);
    for (std::size_t k = 0; k < n; ++k) out.vectors(r, k) = v(k, col);
    normalize_sign(std::span<double>(out.vectors.values.data() + r * n, n));
  }
  return out;
}

PcaModel pca_fit(const VectorDataset& data, std::size_t out_dim) {
  if (out_dim == 0 || out_dim > data.dim) {
    throw ParameterError("pca_fit: out_dim " + std::to_string(out_dim) + " must be in [1, " +
                         std::to_string(data.dim) + "]");
  }
  if (data.count < out_dim) throw ParameterError("pca_fit: fewer points than out_dim");
  const std::size_t d = data.dim;
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < data.count; ++i) {
    auto r = data.row(i);
    for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
  }
  for (double& m : mean) m /= static_cast<double>(data.count);

  DenseMatrix cov(d, d);
  std::vector<double> centered(d);
  for (std::size_t i = 0; i < data.count; ++i) {
    auto r = data.row(i);
    for (std::size_t j = 0; j < d; ++j) centered[j] = r[j] - mean[j];
    for (std::size_t a = 0; a < d; ++a) {
      const double ca = centered[a];
      double* row = cov.values.data() + a * d;
      for (std::size_t b = a; b < d; ++b) row[b] += ca * centered[b];
    }
  }
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      cov(a, b) /= static_cast<double>(data.count);
      cov(b, a) = cov(a, b);
    }
  }
  const auto eig = symmetric_eigen(cov);

  PcaModel model;
  model.dim = d;
  model.out_dim = out_dim;
  model.mean.assign(mean.begin(), mean.end());
  model.components.resize(out_dim * d);
  for (std::size_t r = 0; r < out_dim; ++r) {
    for (std::size_t k = 0; k < d; ++k) model.components[r * d + k] = static_cast<float>(eig.vectors(r, k));
    model.explained_variance.push_back(eig.values[r]);
  }
  return model;
}

std::vector<float> pca_transform(const PcaModel& model, FloatSpan v) {
  require_same_dim(v.size(), model.dim, "pca_transform");
  std::vector<double> centered(model.dim);
  for (std::size_t j = 0; j < model.dim; ++j) centered[j] = static_cast<double>(v[j]) - model.mean[j];
  std::vector<float> out(model.out_dim);
  for (std::size_t r = 0; r < model.out_dim; ++r) {
    const float* c = model.components.data() + r * model.dim;
    double acc = 0.0;
    for (std::size_t j = 0; j < model.dim; ++j) acc += c[j] * centered[j];
    out[r] = static_cast<float>(acc);
  }
  return out;
}

VectorDataset pca_transform(const PcaModel& model, const VectorDataset& data) {
  require_same_dim(data.dim, model.dim, "pca_transform");
  VectorDataset out(model.out_dim, data.count);
  for (std::size_t i = 0; i < data.count; ++i) {
    const auto y = pca_transform(model, data.row(i));
    std::copy(y.begin(), y.end(), out.row(i).begin());
  }
  return out;
}

VectorDataset pca_inverse_transform(const PcaModel& model, const VectorDataset& data) {
  require_same_dim(data.dim, model.out_dim, "pca_inverse_transform");
  VectorDataset out(model.dim, data.count);
  std::vector<double> acc(model.dim);
  for (std::size_t i = 0; i < data.count; ++i) {
    std::copy(model.mean.begin(), model.mean.end(), acc.begin());
    auto y = data.row(i);
    for (std::size_t r = 0; r < model.out_dim; ++r) {
      const float* c = model.components.data() + r * model.dim;
      for (std::size_t j = 0; j < model.dim; ++j) acc[j] += static_cast<double>(c[j]) * y[r];
    }
    auto dst = out.row(i);
    for (std::size_t j = 0; j < model.dim; ++j) dst[j] = static_cast<float>(acc[j]);
  }
  return out;
}

void save_pca(const PcaModel& model, const std::filesystem::path& path) {
  binio::Writer out;
  out.magic("PCA1");
  out.put(static_cast<std::int32_t>(model.dim));
  out.put(static_cast<std::int32_t>(model.out_dim));
  out.put_array(std::span<const float>(model.mean));
  out.put_array(std::span<const float>(model.components));
  out.save(path);
}

PcaModel load_pca(const std::filesystem::path& path) {
  binio::Reader in(path);
  in.expect_magic("PCA1");
  PcaModel model;
  model.dim = in.get_count("dim");
  model.out_dim = in.get_count("out_dim");
  if (model.dim == 0 || model.out_dim == 0 || model.out_dim > model.dim) in.fail("invalid PCA shape");
  model.mean.resize(model.dim);
  model.components.resize(model.out_dim * model.dim);
  in.get_array(std::span<float>(model.mean));
  in.get_array(std::span<float>(model.components));
  if (!in.at_end()) in.fail("trailing bytes");
  return model;
}

RotationMatrix RotationMatrix::identity(std::size_t dim) {
  return from(DenseMatrix::identity(dim));
}

RotationMatrix RotationMatrix::from(const DenseMatrix& m) {
  require(m.rows == m.cols, "rotation must be square");
  RotationMatrix r;
  r.dim = m.rows;
  r.values.assign(m.values.begin(), m.values.end());
  return r;
}

DenseMatrix RotationMatrix::to_dense() const {
  DenseMatrix m(dim, dim);
  std::copy(values.begin(), values.end(), m.values.begin());
  return m;
}

void RotationMatrix::apply(FloatSpan x, std::span<float> out) const {
  for (std::size_t r = 0; r < dim; ++r) {
    const float* row = values.data() + r * dim;
    double acc = 0.0;
    for (std::size_t c = 0; c < dim; ++c) acc += static_cast<double>(row[c]) * x[c];
    out[r] = static_cast<float>(acc);
  }
}

void RotationMatrix::apply_transpose(FloatSpan x, std::span<float> out) const {
  std::vector<double> acc(dim, 0.0);
  for (std::size_t r = 0; r < dim; ++r) {
    const float* row = values.data() + r * dim;
    const double xr = x[r];
    for (std::size_t c = 0; c < dim; ++c) acc[c] += static_cast<double>(row[c]) * xr;
  }
  for (std::size_t c = 0; c < dim; ++c) out[c] = static_cast<float>(acc[c]);
}

ProcrustesResult procrustes(const DenseMatrix& x, const DenseMatrix& y) {
  require(x.rows == y.rows && x.cols == y.cols, "procrustes: x and y must have equal shapes");
  require(x.rows >= 1, "procrustes: need at least one row");
  const std::size_t d = x.cols;
  // C = yᵀx
  DenseMatrix c(d, d);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double* xi = x.values.data() + i * d;
    const double* yi = y.values.data() + i * d;
    for (std::size_t a = 0; a < d; ++a) {
      const double ya = yi[a];
      if (ya == 0.0) continue;
      double* row = c.values.data() + a * d;
      for (std::size_t b = 0; b < d; ++b) row[b] += ya * xi[b];
    }
  }
  double c_norm = 0.0;
  for (double v : c.values) c_norm = std::max(c_norm, std::abs(v));
  if (c_norm == 0.0) return {DenseMatrix::identity(d), true};

  // Scale to unit magnitude so the Gram eigenproblem stays well scaled.
  for (double& v : c.values) v /= c_norm;
  const DenseMatrix gram = c.transposed() * c;  // V S² Vᵀ
  const auto eig = symmetric_eigen(gram, 1e-14, 100);
  const double s_max = std::sqrt(std::max(eig.values.front(), 0.0));

  // Left singular vectors u_i = C v_i / s_i for the numerically nonzero s_i.
  DenseMatrix u(d, d);
  std::size_t rank = 0;
  for (std::size_t i = 0; i < d; ++i) {
    const double s = std::sqrt(std::max(eig.values[i], 0.0));
    if (s <= 1e-10 * s_max) break;
    for (std::size_t a = 0; a < d; ++a) {
      double acc = 0.0;
      for (std::size_t b = 0; b < d; ++b) acc += c(a, b) * eig.vectors(i, b);
      u(i, a) = acc / s;
    }
    ++rank;
  }
  orthonormalize_rows(u, rank);

  // R = U Vᵀ = Σ u_i v_iᵀ
  DenseMatrix r(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t a = 0; a < d; ++a) {
      const double ua = u(i, a);
      for (std::size_t b = 0; b < d; ++b) r(a, b) += ua * eig.vectors(i, b);
    }
  }
  return {r, false};
}

DenseMatrix random_orthonormal(std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  DenseMatrix m(dim, dim);
  for (double& v : m.values) v = standard_normal(rng);
  orthonormalize_rows(m, dim);
  return m;
}

}  // namespace pbr
