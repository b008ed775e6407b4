#pragma once

// Core differentiable layers as free functions over Eigen expressions.
// Forward functions return fresh matrices; backward functions return the
// input gradient and *accumulate* into parameter gradients, so a parameter
// used several times in one pass sums its contributions.

#include "dmf/numerics/dense.hpp"

#include <numbers>

namespace dmf {

template <typename Scalar>
void check_linear_shapes(Index x_cols, const Matrix<Scalar>& w, Index b_size) {
  if (x_cols != w.rows() || b_size != w.cols()) {
    std::ostringstream os;
    os << "linear: input has " << x_cols << " columns, weight is " << shape_str(w) << ", bias has "
       << b_size << " entries";
    throw ShapeError(os.str());
  }
}

/// out = x * w + b (bias broadcast over rows).
template <typename DerivedX, typename Scalar>
Matrix<Scalar> linear(const Eigen::MatrixBase<DerivedX>& x, const Matrix<Scalar>& w,
                      const RowVector<Scalar>& b) {
  check_linear_shapes(x.cols(), w, b.size());
  Matrix<Scalar> out(x.rows(), w.cols());
  out.noalias() = x * w;
  out.rowwise() += b;
  return out;
}

/// Bias-free variant (classifier after the BN neck).
template <typename DerivedX, typename Scalar>
Matrix<Scalar> linear(const Eigen::MatrixBase<DerivedX>& x, const Matrix<Scalar>& w) {
  check_linear_shapes(x.cols(), w, w.cols());
  Matrix<Scalar> out(x.rows(), w.cols());
  out.noalias() = x * w;
  return out;
}

template <typename DerivedX, typename DerivedDy, typename Scalar>
Matrix<Scalar> linear_backward(const Eigen::MatrixBase<DerivedX>& x, const Matrix<Scalar>& w,
                               const Eigen::MatrixBase<DerivedDy>& dy, Matrix<Scalar>* dw,
                               RowVector<Scalar>* db) {
  if (dw) dw->noalias() += x.transpose() * dy;
  if (db) *db += dy.colwise().sum();
  Matrix<Scalar> dx(dy.rows(), w.rows());
  dx.noalias() = dy * w.transpose();
  return dx;
}

template <typename Scalar>
struct NormCache {
  Matrix<Scalar> xhat;
  Vector<Scalar> rstd;  // one per normalized group (row for LN, column for BN)
};

/// Per-row normalization with biased variance, followed by the affine map.
template <typename Scalar>
Matrix<Scalar> layer_norm(const Matrix<Scalar>& x, const RowVector<Scalar>& gamma,
                          const RowVector<Scalar>& beta, Scalar eps, NormCache<Scalar>* cache = nullptr) {
  if (gamma.size() != x.cols() || beta.size() != x.cols())
    throw ShapeError("layer_norm: input " + shape_str(x) + " vs gamma " + shape_str(gamma) +
                     " / beta " + shape_str(beta));
  const Scalar inv_d = Scalar(1) / static_cast<Scalar>(x.cols());
  Matrix<Scalar> xhat(x.rows(), x.cols());
  Vector<Scalar> rstd(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar mean = x.row(r).sum() * inv_d;
    auto centered = x.row(r).array() - mean;
    const Scalar var = centered.square().sum() * inv_d;
    rstd(r) = Scalar(1) / std::sqrt(var + eps);
    xhat.row(r) = centered * rstd(r);
  }
  Matrix<Scalar> out = (xhat.array().rowwise() * gamma.array()).rowwise() + beta.array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> layer_norm_backward(const NormCache<Scalar>& cache, const RowVector<Scalar>& gamma,
                                   const Matrix<Scalar>& dy, RowVector<Scalar>* dgamma,
                                   RowVector<Scalar>* dbeta) {
  if (dgamma) *dgamma += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  if (dbeta) *dbeta += dy.colwise().sum();
  const Scalar inv_d = Scalar(1) / static_cast<Scalar>(dy.cols());
  Matrix<Scalar> dxhat = dy.array().rowwise() * gamma.array();
  Matrix<Scalar> dx(dy.rows(), dy.cols());
  for (Index r = 0; r < dy.rows(); ++r) {
    const Scalar m1 = dxhat.row(r).sum() * inv_d;
    const Scalar m2 = dxhat.row(r).dot(cache.xhat.row(r)) * inv_d;
    dx.row(r) = cache.rstd(r) * (dxhat.row(r).array() - m1 - cache.xhat.row(r).array() * m2);
  }
  return dx;
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
template <typename Derived>
Matrix<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> y(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar mx = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - mx).exp();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

/// Gradient of softmax_rows given its output y.
template <typename DerivedY, typename DerivedDy>
Matrix<typename DerivedY::Scalar> softmax_rows_backward(const Eigen::MatrixBase<DerivedY>& y,
                                                        const Eigen::MatrixBase<DerivedDy>& dy) {
  using Scalar = typename DerivedY::Scalar;
  Matrix<Scalar> dx(y.rows(), y.cols());
  for (Index r = 0; r < y.rows(); ++r) {
    const Scalar s = y.row(r).dot(dy.row(r));
    dx.row(r) = y.row(r).array() * (dy.row(r).array() - s);
  }
  return dx;
}

/// Exact (erf) GELU.
template <typename Scalar>
Matrix<Scalar> gelu(const Matrix<Scalar>& x) {
  const Scalar k = Scalar(1) / std::numbers::sqrt2_v<Scalar>;
  return x.unaryExpr([k](Scalar v) { return Scalar(0.5) * v * (Scalar(1) + std::erf(v * k)); });
}

template <typename Scalar>
Matrix<Scalar> gelu_backward(const Matrix<Scalar>& x, const Matrix<Scalar>& dy) {
  const Scalar k = Scalar(1) / std::numbers::sqrt2_v<Scalar>;
  const Scalar pdf_norm = Scalar(1) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
  Matrix<Scalar> d = x.unaryExpr([=](Scalar v) {
    return Scalar(0.5) * (Scalar(1) + std::erf(v * k)) + v * pdf_norm * std::exp(Scalar(-0.5) * v * v);
  });
  return d.cwiseProduct(dy);
}

/// Batch normalization over rows using batch statistics (biased variance).
/// Also reports the batch mean and unbiased variance for running-stat updates.
template <typename Scalar>
Matrix<Scalar> batch_norm_train(const Matrix<Scalar>& x, const RowVector<Scalar>& gamma,
                                 const RowVector<Scalar>& beta, Scalar eps, NormCache<Scalar>* cache,
                                 RowVector<Scalar>* batch_mean, RowVector<Scalar>* batch_var_unbiased) {
  if (gamma.size() != x.cols() || beta.size() != x.cols())
    throw ShapeError("batch_norm: input " + shape_str(x) + " vs gamma " + shape_str(gamma));
  const Index n = x.rows();
  RowVector<Scalar> mean = x.colwise().mean();
  Matrix<Scalar> centered = x.rowwise() - mean;
  RowVector<Scalar> var = centered.array().square().colwise().sum().matrix() / static_cast<Scalar>(n);
  Vector<Scalar> rstd = (var.array() + eps).rsqrt().matrix().transpose();
  Matrix<Scalar> xhat = centered.array().rowwise() * rstd.transpose().array();
  Matrix<Scalar> out = (xhat.array().rowwise() * gamma.array()).rowwise() + beta.array();
  if (batch_mean) *batch_mean = mean;
  if (batch_var_unbiased)
    *batch_var_unbiased = n > 1 ? RowVector<Scalar>(var * (static_cast<Scalar>(n) / static_cast<Scalar>(n - 1)))
                                : var;
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> batch_norm_eval(const Matrix<Scalar>& x, const RowVector<Scalar>& gamma,
                               const RowVector<Scalar>& beta, const RowVector<Scalar>& running_mean,
                               const RowVector<Scalar>& running_var, Scalar eps) {
  RowVector<Scalar> scale = gamma.array() * (running_var.array() + eps).rsqrt();
  return ((x.rowwise() - running_mean).array().rowwise() * scale.array()).rowwise() + beta.array();
}

template <typename Scalar>
Matrix<Scalar> batch_norm_backward(const NormCache<Scalar>& cache, const RowVector<Scalar>& gamma,
                                   const Matrix<Scalar>& dy, RowVector<Scalar>* dgamma,
                                   RowVector<Scalar>* dbeta) {
  if (dgamma) *dgamma += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  if (dbeta) *dbeta += dy.colwise().sum();
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(dy.rows());
  Matrix<Scalar> dxhat = dy.array().rowwise() * gamma.array();
  RowVector<Scalar> m1 = dxhat.colwise().sum() * inv_n;
  RowVector<Scalar> m2 = (dxhat.array() * cache.xhat.array()).colwise().sum().matrix() * inv_n;
  Matrix<Scalar> dx = (dxhat.rowwise() - m1).array() - cache.xhat.array().rowwise() * m2.array();
  dx.array().rowwise() *= cache.rstd.transpose().array();
  return dx;
}

}  // namespace dmf
