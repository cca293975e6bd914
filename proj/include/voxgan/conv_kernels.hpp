#pragma once

#include <array>
#include <cstddef>
#include <cstring>
#include <vector>

#include "voxgan/parallel.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

// Raw 3-d convolution kernels over contiguous [N,C,D,H,W] buffers (W fastest).
// Each operation has two routes: a direct nested-loop form that serves as the
// reference, and an im2col/GEMM form used by default. Both accumulate each
// output element in the same index order, and parallel variants only split
// disjoint output slabs, so results do not depend on thread count.

namespace voxgan::conv {

struct Geom {
    std::size_t n = 1;                  // batch
    std::size_t cin = 1;                // channels of the [N,cin,in] operand
    std::size_t cout = 1;               // channels of the [N,cout,out] operand
    std::array<std::size_t, 3> in{};    // D,H,W of the small-stride-space side
    std::array<std::size_t, 3> k{};     // kernel extents
    std::array<std::size_t, 3> out{};   // D,H,W of the other side
    long stride = 1;
    long pad = 0;

    std::size_t in_spatial() const { return in[0] * in[1] * in[2]; }
    std::size_t out_spatial() const { return out[0] * out[1] * out[2]; }
    std::size_t k_elems() const { return k[0] * k[1] * k[2]; }
};

// Spatial extent of conv3d output for one axis; requires d + 2p >= kd.
inline std::size_t conv_out_extent(std::size_t d, std::size_t kd, long stride, long pad) {
    return (d + 2 * static_cast<std::size_t>(pad) - kd) / static_cast<std::size_t>(stride) + 1;
}

// Default spatial extent of conv_transpose3d output for one axis.
inline std::size_t convt_out_extent(std::size_t d, std::size_t kd, long stride, long pad) {
    return (d - 1) * static_cast<std::size_t>(stride) + kd - 2 * static_cast<std::size_t>(pad);
}

// C[m x n] (+)= A[m x kk] * B[kk x n], row-major.
template <typename T>
inline void gemm(std::size_t m, std::size_t n, std::size_t kk, const T* a, const T* b,
                 T* c, bool accumulate, bool parallel_rows) {
    const int nt = parallel_rows ? intra_op_threads() : 1;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && m > 1)
#endif
    for (long long ii = 0; ii < static_cast<long long>(m); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        T* crow = c + i * n;
        if (!accumulate) std::memset(crow, 0, n * sizeof(T));
        const T* arow = a + i * kk;
        for (std::size_t p = 0; p < kk; ++p) {
            const T av = arow[p];
            if (av == T(0)) continue;
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
#ifndef _OPENMP
    (void)nt;
#endif
}

// C[m x n] += A[m x l] * B^T where B is [n x l] row-major.
template <typename T>
inline void gemm_abt(std::size_t m, std::size_t n, std::size_t l, const T* a, const T* b,
                     T* c, bool parallel_rows) {
    const int nt = parallel_rows ? intra_op_threads() : 1;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && m > 1)
#endif
    for (long long ii = 0; ii < static_cast<long long>(m); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        const T* arow = a + i * l;
        T* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b + j * l;
            T acc = T(0);
            for (std::size_t p = 0; p < l; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
#ifndef _OPENMP
    (void)nt;
#endif
}

// cols[cin*k^3 x out_spatial] gathered from one sample x[cin, in].
template <typename T>
inline void im2col(const Geom& g, const T* x, T* cols) {
    const std::size_t osp = g.out_spatial();
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.cin; ++c) {
        const T* xc = x + c * g.in_spatial();
        for (std::size_t kd = 0; kd < g.k[0]; ++kd)
            for (std::size_t kh = 0; kh < g.k[1]; ++kh)
                for (std::size_t kw = 0; kw < g.k[2]; ++kw, ++row) {
                    T* dst = cols + row * osp;
                    for (std::size_t od = 0; od < g.out[0]; ++od) {
                        const long id = static_cast<long>(od) * g.stride - g.pad +
                                        static_cast<long>(kd);
                        const bool drow_ok = id >= 0 && id < static_cast<long>(g.in[0]);
                        for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
                            const long ih = static_cast<long>(oh) * g.stride - g.pad +
                                            static_cast<long>(kh);
                            T* d = dst + (od * g.out[1] + oh) * g.out[2];
                            if (!drow_ok || ih < 0 || ih >= static_cast<long>(g.in[1])) {
                                std::memset(d, 0, g.out[2] * sizeof(T));
                                continue;
                            }
                            const T* src = xc + (static_cast<std::size_t>(id) * g.in[1] +
                                                 static_cast<std::size_t>(ih)) *
                                                    g.in[2];
                            for (std::size_t ow = 0; ow < g.out[2]; ++ow) {
                                const long iw = static_cast<long>(ow) * g.stride - g.pad +
                                                static_cast<long>(kw);
                                d[ow] = (iw >= 0 && iw < static_cast<long>(g.in[2]))
                                            ? src[iw]
                                            : T(0);
                            }
                        }
                    }
                }
    }
}

// Adjoint of im2col: scatter-add cols back into one sample x[cin, in].
template <typename T>
inline void col2im_add(const Geom& g, const T* cols, T* x) {
    const std::size_t osp = g.out_spatial();
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.cin; ++c) {
        T* xc = x + c * g.in_spatial();
        for (std::size_t kd = 0; kd < g.k[0]; ++kd)
            for (std::size_t kh = 0; kh < g.k[1]; ++kh)
                for (std::size_t kw = 0; kw < g.k[2]; ++kw, ++row) {
                    const T* src_row = cols + row * osp;
                    for (std::size_t od = 0; od < g.out[0]; ++od) {
                        const long id = static_cast<long>(od) * g.stride - g.pad +
                                        static_cast<long>(kd);
                        if (id < 0 || id >= static_cast<long>(g.in[0])) continue;
                        for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
                            const long ih = static_cast<long>(oh) * g.stride - g.pad +
                                            static_cast<long>(kh);
                            if (ih < 0 || ih >= static_cast<long>(g.in[1])) continue;
                            const T* s = src_row + (od * g.out[1] + oh) * g.out[2];
                            T* dst = xc + (static_cast<std::size_t>(id) * g.in[1] +
                                           static_cast<std::size_t>(ih)) *
                                              g.in[2];
                            for (std::size_t ow = 0; ow < g.out[2]; ++ow) {
                                const long iw = static_cast<long>(ow) * g.stride - g.pad +
                                                static_cast<long>(kw);
                                if (iw >= 0 && iw < static_cast<long>(g.in[2]))
                                    dst[static_cast<std::size_t>(iw)] += s[ow];
                            }
                        }
                    }
                }
    }
}

// --- conv3d: out[N,cout,out] = x[N,cin,in] * w[cout,cin,k] -------------------

template <typename T>
inline void conv3d_direct(const Geom& g, const T* x, const T* w, T* out) {
    const std::size_t isp = g.in_spatial(), osp = g.out_spatial(), ke = g.k_elems();
    for (std::size_t n = 0; n < g.n; ++n)
        for (std::size_t f = 0; f < g.cout; ++f) {
            T* o = out + (n * g.cout + f) * osp;
            for (std::size_t od = 0; od < g.out[0]; ++od)
                for (std::size_t oh = 0; oh < g.out[1]; ++oh)
                    for (std::size_t ow = 0; ow < g.out[2]; ++ow) {
                        T acc = T(0);
                        for (std::size_t c = 0; c < g.cin; ++c) {
                            const T* xc = x + (n * g.cin + c) * isp;
                            const T* wc = w + (f * g.cin + c) * ke;
                            for (std::size_t kd = 0; kd < g.k[0]; ++kd) {
                                const long id = static_cast<long>(od) * g.stride - g.pad +
                                                static_cast<long>(kd);
                                if (id < 0 || id >= static_cast<long>(g.in[0])) continue;
                                for (std::size_t kh = 0; kh < g.k[1]; ++kh) {
                                    const long ih = static_cast<long>(oh) * g.stride -
                                                    g.pad + static_cast<long>(kh);
                                    if (ih < 0 || ih >= static_cast<long>(g.in[1]))
                                        continue;
                                    for (std::size_t kw = 0; kw < g.k[2]; ++kw) {
                                        const long iw = static_cast<long>(ow) * g.stride -
                                                        g.pad + static_cast<long>(kw);
                                        if (iw < 0 || iw >= static_cast<long>(g.in[2]))
                                            continue;
                                        acc += xc[(static_cast<std::size_t>(id) * g.in[1] +
                                                   static_cast<std::size_t>(ih)) *
                                                      g.in[2] +
                                                  static_cast<std::size_t>(iw)] *
                                               wc[(kd * g.k[1] + kh) * g.k[2] + kw];
                                    }
                                }
                            }
                        }
                        o[(od * g.out[1] + oh) * g.out[2] + ow] = acc;
                    }
        }
}

template <typename T>
inline void conv3d_gemm(const Geom& g, const T* x, const T* w, T* out) {
    const std::size_t isp = g.in_spatial(), osp = g.out_spatial();
    const std::size_t rows = g.cin * g.k_elems();
    const int nt = intra_op_threads();
    const bool batch_par = g.n > 1 && nt > 1;
    auto sample = [&](std::size_t n, bool parallel_rows) {
        std::vector<T> cols(rows * osp);
        im2col(g, x + n * g.cin * isp, cols.data());
        gemm(g.cout, osp, rows, w, cols.data(), out + n * g.cout * osp,
             /*accumulate=*/false, parallel_rows);
    };
    if (batch_par) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nt)
#endif
        for (long long n = 0; n < static_cast<long long>(g.n); ++n)
            sample(static_cast<std::size_t>(n), false);
    } else {
        for (std::size_t n = 0; n < g.n; ++n) sample(n, true);
    }
}

// --- conv_transpose3d: out[N,cout,out] scattered from y[N,cin,in], w[cin,cout,k]

template <typename T>
inline void conv_transpose3d_direct(const Geom& g, const T* y, const T* w, T* out) {
    const std::size_t isp = g.in_spatial(), osp = g.out_spatial(), ke = g.k_elems();
    for (std::size_t n = 0; n < g.n; ++n)
        for (std::size_t co = 0; co < g.cout; ++co) {
            T* o = out + (n * g.cout + co) * osp;
            for (std::size_t xd = 0; xd < g.out[0]; ++xd)
                for (std::size_t xh = 0; xh < g.out[1]; ++xh)
                    for (std::size_t xw = 0; xw < g.out[2]; ++xw) {
                        T acc = T(0);
                        for (std::size_t ci = 0; ci < g.cin; ++ci) {
                            const T* yc = y + (n * g.cin + ci) * isp;
                            const T* wc = w + (ci * g.cout + co) * ke;
                            for (std::size_t kd = 0; kd < g.k[0]; ++kd) {
                                const long t = static_cast<long>(xd) + g.pad -
                                               static_cast<long>(kd);
                                if (t < 0 || t % g.stride != 0) continue;
                                const long od = t / g.stride;
                                if (od >= static_cast<long>(g.in[0])) continue;
                                for (std::size_t kh = 0; kh < g.k[1]; ++kh) {
                                    const long u = static_cast<long>(xh) + g.pad -
                                                   static_cast<long>(kh);
                                    if (u < 0 || u % g.stride != 0) continue;
                                    const long oh = u / g.stride;
                                    if (oh >= static_cast<long>(g.in[1])) continue;
                                    for (std::size_t kw = 0; kw < g.k[2]; ++kw) {
                                        const long v = static_cast<long>(xw) + g.pad -
                                                       static_cast<long>(kw);
                                        if (v < 0 || v % g.stride != 0) continue;
                                        const long ow = v / g.stride;
                                        if (ow >= static_cast<long>(g.in[2])) continue;
                                        acc += yc[(static_cast<std::size_t>(od) * g.in[1] +
                                                   static_cast<std::size_t>(oh)) *
                                                      g.in[2] +
                                                  static_cast<std::size_t>(ow)] *
                                               wc[(kd * g.k[1] + kh) * g.k[2] + kw];
                                    }
                                }
                            }
                        }
                        o[(xd * g.out[1] + xh) * g.out[2] + xw] = acc;
                    }
        }
}

template <typename T>
inline void conv_transpose3d_gemm(const Geom& g, const T* y, const T* w, T* out) {
    const std::size_t isp = g.in_spatial(), osp = g.out_spatial(), ke = g.k_elems();
    const std::size_t rows = g.cout * ke;
    // Reorder w[cin,cout,k] into wt[cout*k, cin] once.
    std::vector<T> wt(rows * g.cin);
    for (std::size_t ci = 0; ci < g.cin; ++ci)
        for (std::size_t co = 0; co < g.cout; ++co)
            for (std::size_t kk = 0; kk < ke; ++kk)
                wt[(co * ke + kk) * g.cin + ci] = w[(ci * g.cout + co) * ke + kk];

    // Scatter geometry: the im2col "input" side is the large output volume.
    Geom s = g;
    s.cin = g.cout;
    s.in = g.out;
    s.out = g.in;

    const int nt = intra_op_threads();
    const bool batch_par = g.n > 1 && nt > 1;
    auto sample = [&](std::size_t n, bool parallel_rows) {
        std::vector<T> cols(rows * isp);
        gemm(rows, isp, g.cin, wt.data(), y + n * g.cin * isp, cols.data(),
             /*accumulate=*/false, parallel_rows);
        T* o = out + n * g.cout * osp;
        std::memset(o, 0, g.cout * osp * sizeof(T));
        col2im_add(s, cols.data(), o);
    };
    if (batch_par) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nt)
#endif
        for (long long n = 0; n < static_cast<long long>(g.n); ++n)
            sample(static_cast<std::size_t>(n), false);
    } else {
        for (std::size_t n = 0; n < g.n; ++n) sample(n, true);
    }
}

// --- kernel gradient: kg[cout,cin,k] = sum_n corr(x[n,cin,in], gy[n,cout,out])

template <typename T>
inline void conv3d_kernel_grad_direct(const Geom& g, const T* x, const T* gy, T* kg) {
    const std::size_t isp = g.in_spatial(), osp = g.out_spatial(), ke = g.k_elems();
    std::memset(kg, 0, g.cout * g.cin * ke * sizeof(T));
    for (std::size_t n = 0; n < g.n; ++n)
        for (std::size_t f = 0; f < g.cout; ++f) {
            const T* gc = gy + (n * g.cout + f) * osp;
            for (std::size_t c = 0; c < g.cin; ++c) {
                const T* xc = x + (n * g.cin + c) * isp;
                T* kc = kg + (f * g.cin + c) * ke;
                for (std::size_t kd = 0; kd < g.k[0]; ++kd)
                    for (std::size_t kh = 0; kh < g.k[1]; ++kh)
                        for (std::size_t kw = 0; kw < g.k[2]; ++kw) {
                            T acc = T(0);
                            for (std::size_t od = 0; od < g.out[0]; ++od) {
                                const long id = static_cast<long>(od) * g.stride - g.pad +
                                                static_cast<long>(kd);
                                if (id < 0 || id >= static_cast<long>(g.in[0])) continue;
                                for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
                                    const long ih = static_cast<long>(oh) * g.stride -
                                                    g.pad + static_cast<long>(kh);
                                    if (ih < 0 || ih >= static_cast<long>(g.in[1]))
                                        continue;
                                    for (std::size_t ow = 0; ow < g.out[2]; ++ow) {
                                        const long iw = static_cast<long>(ow) * g.stride -
                                                        g.pad + static_cast<long>(kw);
                                        if (iw < 0 || iw >= static_cast<long>(g.in[2]))
                                            continue;
                                        acc += xc[(static_cast<std::size_t>(id) * g.in[1] +
                                                   static_cast<std::size_t>(ih)) *
                                                      g.in[2] +
                                                  static_cast<std::size_t>(iw)] *
                                               gc[(od * g.out[1] + oh) * g.out[2] + ow];
                                    }
                                }
                            }
                            kc[(kd * g.k[1] + kh) * g.k[2] + kw] += acc;
                        }
            }
        }
}

template <typename T>
inline void conv3d_kernel_grad_gemm(const Geom& g, const T* x, const T* gy, T* kg) {
    const std::size_t isp = g.in_spatial(), osp = g.out_spatial();
    const std::size_t rows = g.cin * g.k_elems();
    std::memset(kg, 0, g.cout * rows * sizeof(T));
    std::vector<T> cols(rows * osp);
    // Accumulation over n stays sequential per output row: fixed order.
    for (std::size_t n = 0; n < g.n; ++n) {
        im2col(g, x + n * g.cin * isp, cols.data());
        gemm_abt(g.cout, rows, osp, gy + n * g.cout * osp, cols.data(), kg,
                 /*parallel_rows=*/true);
    }
}

}  // namespace voxgan::conv
