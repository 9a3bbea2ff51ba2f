#include "meshalign/kernels.hpp"

#include <Eigen/Core>

namespace meshalign::kernels {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

Eigen::Index idx(std::size_t n) { return static_cast<Eigen::Index>(n); }

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  if (m == 0 || n == 0 || k == 0) return;
  Map(c, idx(m), idx(n)).noalias() += ConstMap(a, idx(m), idx(k)) * ConstMap(b, idx(k), idx(n));
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  if (m == 0 || n == 0 || k == 0) return;
  Map(c, idx(m), idx(n)).noalias() +=
      ConstMap(a, idx(m), idx(k)) * ConstMap(b, idx(n), idx(k)).transpose();
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  if (m == 0 || n == 0 || k == 0) return;
  Map(c, idx(m), idx(n)).noalias() +=
      ConstMap(a, idx(k), idx(m)).transpose() * ConstMap(b, idx(k), idx(n));
}

}  // namespace meshalign::kernels
