// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

#include <Eigen/Dense>

namespace cnnlab::kernels {

using RowMat =
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Strided = Eigen::OuterStride<>;
using CMap = Eigen::Map<const RowMat, 0, Strided>;
using MMap = Eigen::Map<RowMat, 0, Strided>;

inline Eigen::Index ix(std::size_t v) { return static_cast<Eigen::Index>(v); }

// Wt[co, t*Cin + ci] = W[co, ci, t]
inline RowMat conv_filter_matrix(const double* W, std::size_t Cout,
                                 std::size_t Cin, std::size_t filter) {
  RowMat Wt(ix(Cout), ix(Cin * filter));
  for (std::size_t co = 0; co < Cout; ++co)
    for (std::size_t ci = 0; ci < Cin; ++ci)
      for (std::size_t t = 0; t < filter; ++t)
        Wt(ix(co), ix(t * Cin + ci)) = W[(co * Cin + ci) * filter + t];
  return Wt;
}

// O[r, :] = b + Z[r, :] Wt^T for R rows; Wt is Cout x K. KK and CO fix K
// and Cout at compile time when nonzero.
template <std::size_t KK, std::size_t CO>
void rows_times_filter_impl(const double* Z, std::size_t R, std::size_t K_,
                            std::size_t Cout_, const double* wT,
                            const double* b, double* O) {
  const std::size_t K = KK ? KK : K_;
  const std::size_t Cout = CO ? CO : Cout_;
  for (std::size_t r = 0; r < R; ++r) {
    const double* z = Z + r * K;
    double* o = O + r * Cout;
    for (std::size_t co = 0; co < Cout; ++co)
      o[co] = b ? b[co] : 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      double zk = z[k];
      const double* wk = wT + k * Cout;
      for (std::size_t co = 0; co < Cout; ++co)
        o[co] += zk * wk[co];
    }
  }
}

template <std::size_t KK, std::size_t CO>
void rows_filter_grad_impl(const double* Z, const double* G, std::size_t R,
                           std::size_t K_, std::size_t Cout_, const double* w,
                           double* dZ, double* dWt, double* db) {
  const std::size_t K = KK ? KK : K_;
  const std::size_t Cout = CO ? CO : Cout_;
  for (std::size_t r = 0; r < R; ++r) {
    const double* z = Z + r * K;
    const double* g = G + r * Cout;
    if (db)
      for (std::size_t co = 0; co < Cout; ++co)
        db[co] += g[co];
    if (dWt)
      for (std::size_t co = 0; co < Cout; ++co) {
        double gv = g[co];
        double* dw = dWt + co * K;
        for (std::size_t k = 0; k < K; ++k)
          dw[k] += gv * z[k];
      }
    if (dZ) {
      double* dz = dZ + r * K;
      for (std::size_t k = 0; k < K; ++k) {
        double acc = 0.0;
        for (std::size_t co = 0; co < Cout; ++co)
          acc += g[co] * w[co * K + k];
        dz[k] += acc;
      }
    }
  }
}

inline void rows_times_filter(const double* Z, std::size_t R, std::size_t K,
                              const RowMat& Wt, const double* b, double* O) {
  std::size_t Cout = static_cast<std::size_t>(Wt.rows());
  RowMat WtT = Wt.transpose();
  const double* w = WtT.data();
  if (Cout == 4 && K == 4)
    rows_times_filter_impl<4, 4>(Z, R, K, Cout, w, b, O);
  else if (Cout == 4 && K == 16)
    rows_times_filter_impl<16, 4>(Z, R, K, Cout, w, b, O);
  else if (Cout == 4)
    rows_times_filter_impl<0, 4>(Z, R, K, Cout, w, b, O);
  else
    rows_times_filter_impl<0, 0>(Z, R, K, Cout, w, b, O);
}

// dWt += G^T Z, dZ += G Wt, db += column sums of G
inline void rows_filter_grad(const double* Z, const double* G, std::size_t R,
                             std::size_t K, const RowMat& Wt, double* dZ,
                             double* dWt, double* db) {
  std::size_t Cout = static_cast<std::size_t>(Wt.rows());
  const double* w = Wt.data();
  if (Cout == 4 && K == 4)
    rows_filter_grad_impl<4, 4>(Z, G, R, K, Cout, w, dZ, dWt, db);
  else if (Cout == 4 && K == 16)
    rows_filter_grad_impl<16, 4>(Z, G, R, K, Cout, w, dZ, dWt, db);
  else if (Cout == 4)
    rows_filter_grad_impl<0, 4>(Z, G, R, K, Cout, w, dZ, dWt, db);
  else
    rows_filter_grad_impl<0, 0>(Z, G, R, K, Cout, w, dZ, dWt, db);
}

inline bool small_filter(std::size_t K, std::size_t Cout) {
  return K * Cout <= 1024;
}

// out[n,i,co] = b[co] + sum_{ci,t} W[co,ci,t] z[n, i*stride + t, ci]
inline void conv_fwd(const double* z, std::size_t N, std::size_t D,
                     std::size_t Cin, const double* W, const double* b,
                     std::size_t Cout, std::size_t filter, std::size_t stride,
                     double* out) {
  std::size_t Dout = (D - filter) / stride + 1;
  if (filter == stride) {
    RowMat Wt = conv_filter_matrix(W, Cout, Cin, filter);
    std::size_t K = filter * Cin;
    // with D == Dout * filter the batch is one (N Dout) x K matrix
    std::size_t blocks = D == Dout * filter ? 1 : N;
    std::size_t rows = D == Dout * filter ? N * Dout : Dout;
    for (std::size_t n = 0; n < blocks; ++n) {
      if (small_filter(K, Cout)) {
        rows_times_filter(z + n * D * Cin, rows, K, Wt, b, out + n * Dout * Cout);
        continue;
      }
      CMap Z(z + n * D * Cin, ix(rows), ix(K), Strided(ix(K)));
      MMap O(out + n * Dout * Cout, ix(rows), ix(Cout), Strided(ix(Cout)));
      O.noalias() = Z * Wt.transpose();
      if (b)
        O.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b, ix(Cout));
    }
    return;
  }
  for (std::size_t n = 0; n < N; ++n) {
    const double* zn = z + n * D * Cin;
    double* on = out + n * Dout * Cout;
    for (std::size_t i = 0; i < Dout; ++i) {
      const double* patch = zn + i * stride * Cin;
      for (std::size_t co = 0; co < Cout; ++co) {
        double acc = b ? b[co] : 0.0;
        const double* w = W + co * Cin * filter;
        for (std::size_t ci = 0; ci < Cin; ++ci)
          for (std::size_t t = 0; t < filter; ++t)
            acc += w[ci * filter + t] * patch[t * Cin + ci];
        on[i * Cout + co] = acc;
      }
    }
  }
}

inline void conv_bwd(const double* z, std::size_t N, std::size_t D,
                     std::size_t Cin, const double* W, std::size_t Cout,
                     std::size_t filter, std::size_t stride, const double* g,
                     double* dz, double* dW, double* db) {
  std::size_t Dout = (D - filter) / stride + 1;
  if (filter == stride) {
    std::size_t K = filter * Cin;
    RowMat Wt = conv_filter_matrix(W, Cout, Cin, filter);
    RowMat dWt = RowMat::Zero(ix(Cout), ix(K));
    Eigen::RowVectorXd dbv = Eigen::RowVectorXd::Zero(ix(Cout));
    std::size_t blocks = D == Dout * filter ? 1 : N;
    std::size_t rows = D == Dout * filter ? N * Dout : Dout;
    for (std::size_t n = 0; n < blocks; ++n) {
      if (small_filter(K, Cout)) {
        rows_filter_grad(z + n * D * Cin, g + n * Dout * Cout, rows, K, Wt,
                         dz ? dz + n * D * Cin : nullptr,
                         dW ? dWt.data() : nullptr, db ? dbv.data() : nullptr);
        continue;
      }
      CMap G(g + n * Dout * Cout, ix(rows), ix(Cout), Strided(ix(Cout)));
      if (dW) {
        CMap Z(z + n * D * Cin, ix(rows), ix(K), Strided(ix(K)));
        dWt.noalias() += G.transpose() * Z;
      }
      if (db)
        dbv += G.colwise().sum();
      if (dz) {
        MMap dZ(dz + n * D * Cin, ix(rows), ix(K), Strided(ix(K)));
        dZ.noalias() += G * Wt;
      }
    }
    if (dW)
      for (std::size_t co = 0; co < Cout; ++co)
        for (std::size_t ci = 0; ci < Cin; ++ci)
          for (std::size_t t = 0; t < filter; ++t)
            dW[(co * Cin + ci) * filter + t] += dWt(ix(co), ix(t * Cin + ci));
    if (db)
      for (std::size_t co = 0; co < Cout; ++co)
        db[co] += dbv(ix(co));
    return;
  }
  for (std::size_t n = 0; n < N; ++n) {
    const double* zn = z + n * D * Cin;
    const double* gn = g + n * Dout * Cout;
    double* dzn = dz ? dz + n * D * Cin : nullptr;
    for (std::size_t i = 0; i < Dout; ++i) {
      const double* patch = zn + i * stride * Cin;
      for (std::size_t co = 0; co < Cout; ++co) {
        double gv = gn[i * Cout + co];
        if (gv == 0.0)
          continue;
        if (db)
          db[co] += gv;
        const double* w = W + co * Cin * filter;
        for (std::size_t ci = 0; ci < Cin; ++ci)
          for (std::size_t t = 0; t < filter; ++t) {
            if (dW)
              dW[co * Cin * filter + ci * filter + t] +=
                gv * patch[t * Cin + ci];
            if (dzn)
              dzn[(i * stride + t) * Cin + ci] += gv * w[ci * filter + t];
          }
      }
    }
  }
}

// Wj[co, t*Cin + ci] = W[co, ci, j*s + t]
inline RowMat local_filter_matrix(const double* W, std::size_t D,
                                  std::size_t Cout, std::size_t Cin,
                                  std::size_t s, std::size_t j) {
  RowMat Wj(ix(Cout), ix(Cin * s));
  for (std::size_t co = 0; co < Cout; ++co)
    for (std::size_t ci = 0; ci < Cin; ++ci)
      for (std::size_t t = 0; t < s; ++t)
        Wj(ix(co), ix(t * Cin + ci)) = W[(co * Cin + ci) * D + j * s + t];
  return Wj;
}

// out[n,j,co] = b[j,co] + sum_{ci,t} W[co,ci,j*s+t] z[n, j*s+t, ci]
inline void local_fwd(const double* z, std::size_t N, std::size_t D,
                      std::size_t Cin, const double* W, const double* b,
                      std::size_t Cout, std::size_t s, double* out) {
  std::size_t Dout = D / s, K = s * Cin;
  for (std::size_t j = 0; j < Dout; ++j) {
    RowMat Wj = local_filter_matrix(W, D, Cout, Cin, s, j);
    CMap Z(z + j * K, ix(N), ix(K), Strided(ix(D * Cin)));
    MMap O(out + j * Cout, ix(N), ix(Cout), Strided(ix(Dout * Cout)));
    O.noalias() = Z * Wj.transpose();
    if (b)
      O.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b + j * Cout, ix(Cout));
  }
}

inline void local_bwd(const double* z, std::size_t N, std::size_t D,
                      std::size_t Cin, const double* W, std::size_t Cout,
                      std::size_t s, const double* g, double* dz, double* dW,
                      double* db) {
  std::size_t Dout = D / s, K = s * Cin;
  for (std::size_t j = 0; j < Dout; ++j) {
    CMap G(g + j * Cout, ix(N), ix(Cout), Strided(ix(Dout * Cout)));
    if (dW) {
      CMap Z(z + j * K, ix(N), ix(K), Strided(ix(D * Cin)));
      RowMat dWj = G.transpose() * Z;
      for (std::size_t co = 0; co < Cout; ++co)
        for (std::size_t ci = 0; ci < Cin; ++ci)
          for (std::size_t t = 0; t < s; ++t)
            dW[(co * Cin + ci) * D + j * s + t] += dWj(ix(co), ix(t * Cin + ci));
    }
    if (db) {
      Eigen::RowVectorXd c = G.colwise().sum();
      for (std::size_t co = 0; co < Cout; ++co)
        db[j * Cout + co] += c(ix(co));
    }
    if (dz) {
      RowMat Wj = local_filter_matrix(W, D, Cout, Cin, s, j);
      MMap dZ(dz + j * K, ix(N), ix(K), Strided(ix(D * Cin)));
      dZ.noalias() += G * Wj;
    }
  }
}

// out[n,co] = b[co] + sum_ci W[co,ci] z[n,ci]
inline void dense_fwd(const double* z, std::size_t N, std::size_t Cin,
                      const double* W, const double* b, std::size_t Cout,
                      double* out) {
  CMap Z(z, ix(N), ix(Cin), Strided(ix(Cin)));
  CMap Wm(W, ix(Cout), ix(Cin), Strided(ix(Cin)));
  MMap O(out, ix(N), ix(Cout), Strided(ix(Cout)));
  O.noalias() = Z * Wm.transpose();
  if (b)
    O.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b, ix(Cout));
}

inline void dense_bwd(const double* z, std::size_t N, std::size_t Cin,
                      const double* W, std::size_t Cout, const double* g,
                      double* dz, double* dW, double* db) {
  CMap G(g, ix(N), ix(Cout), Strided(ix(Cout)));
  if (dW) {
    CMap Z(z, ix(N), ix(Cin), Strided(ix(Cin)));
    MMap dWm(dW, ix(Cout), ix(Cin), Strided(ix(Cin)));
    dWm.noalias() += G.transpose() * Z;
  }
  if (db) {
    Eigen::Map<Eigen::RowVectorXd> dbv(db, ix(Cout));
    dbv += G.colwise().sum();
  }
  if (dz) {
    CMap Wm(W, ix(Cout), ix(Cin), Strided(ix(Cin)));
    MMap dZ(dz, ix(N), ix(Cin), Strided(ix(Cin)));
    dZ.noalias() += G * Wm;
  }
}

} // namespace cnnlab::kernels
