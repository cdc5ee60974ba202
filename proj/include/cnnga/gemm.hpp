#pragma once

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <vector>

namespace cnnga::detail {

/// Operand layout for gemm: `normal` reads A(i,k) = a[i*lda + k]; `transposed` reads a[k*lda + i].
enum class Op { normal, transposed };

template <class T>
struct GemmTiling {
    static constexpr int lanes = 64 / static_cast<int>(sizeof(T));
    static constexpr int mr = 12;
    static constexpr int nr = 2 * lanes;
    static constexpr std::size_t kc = 256;
    static constexpr std::size_t nc = 1024;
};

// c[mr x nr] += packed_a[kc x mr]^T * packed_b[kc x nr]
template <class T>
inline void gemm_micro_kernel(std::size_t kc, const T* __restrict pa, const T* __restrict pb, T* __restrict c,
                              std::size_t ldc) {
    using Tile = GemmTiling<T>;
    constexpr int MR = Tile::mr;
#if defined(__GNUC__)
    constexpr int L = Tile::lanes;
    typedef T vec __attribute__((vector_size(64), aligned(sizeof(T))));
    vec acc0[MR];
    vec acc1[MR];
    for (int r = 0; r < MR; ++r) {
        acc0[r] = vec{};
        acc1[r] = vec{};
    }
    for (std::size_t k = 0; k < kc; ++k) {
        vec b0;
        vec b1;
        std::memcpy(&b0, pb + k * 2 * L, sizeof(vec));
        std::memcpy(&b1, pb + k * 2 * L + L, sizeof(vec));
        const T* a = pa + k * MR;
        for (int r = 0; r < MR; ++r) {
            const T av = a[r];
            acc0[r] += av * b0;
            acc1[r] += av * b1;
        }
    }
    for (int r = 0; r < MR; ++r) {
        vec t0;
        vec t1;
        std::memcpy(&t0, c + r * ldc, sizeof(vec));
        std::memcpy(&t1, c + r * ldc + L, sizeof(vec));
        t0 += acc0[r];
        t1 += acc1[r];
        std::memcpy(c + r * ldc, &t0, sizeof(vec));
        std::memcpy(c + r * ldc + L, &t1, sizeof(vec));
    }
#else
    constexpr int NR = Tile::nr;
    T acc[MR][NR] = {};
    for (std::size_t k = 0; k < kc; ++k) {
        for (int r = 0; r < MR; ++r) {
            for (int j = 0; j < NR; ++j) acc[r][j] += pa[k * MR + r] * pb[k * NR + j];
        }
    }
    for (int r = 0; r < MR; ++r) {
        for (int j = 0; j < NR; ++j) c[r * ldc + j] += acc[r][j];
    }
#endif
}

/// C[M x N] += op(A)[M x K] * op(B)[K x N], all row-major. Summation order is fixed, so results are
/// bitwise reproducible for identical inputs.
template <class T>
void gemm(Op op_a, Op op_b, std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T* c, std::size_t ldc) {
    using Tile = GemmTiling<T>;
    constexpr std::size_t MR = Tile::mr;
    constexpr std::size_t NR = Tile::nr;
    if (m == 0 || n == 0 || k == 0) return;

    thread_local std::vector<T> packed_a;
    thread_local std::vector<T> packed_b;
    T tile[MR * NR];

    const std::size_t a_panels = (m + MR - 1) / MR;
    for (std::size_t j0 = 0; j0 < n; j0 += Tile::nc) {
        const std::size_t nc = std::min(Tile::nc, n - j0);
        const std::size_t b_panels = (nc + NR - 1) / NR;
        for (std::size_t k0 = 0; k0 < k; k0 += Tile::kc) {
            const std::size_t kc = std::min(Tile::kc, k - k0);

            packed_b.resize(b_panels * kc * NR);
            for (std::size_t p = 0; p < b_panels; ++p) {
                T* dst = packed_b.data() + p * kc * NR;
                const std::size_t col0 = j0 + p * NR;
                const std::size_t width = std::min(NR, n - col0);
                for (std::size_t kk = 0; kk < kc; ++kk) {
                    T* row = dst + kk * NR;
                    if (op_b == Op::normal) {
                        const T* src = b + (k0 + kk) * ldb + col0;
                        std::copy(src, src + width, row);
                    } else {
                        for (std::size_t j = 0; j < width; ++j) row[j] = b[(col0 + j) * ldb + k0 + kk];
                    }
                    std::fill(row + width, row + NR, T(0));
                }
            }

            packed_a.resize(a_panels * kc * MR);
            for (std::size_t q = 0; q < a_panels; ++q) {
                T* dst = packed_a.data() + q * kc * MR;
                const std::size_t row0 = q * MR;
                const std::size_t height = std::min(MR, m - row0);
                if (op_a == Op::normal) {
                    for (std::size_t r = 0; r < MR; ++r) {
                        if (r < height) {
                            const T* src = a + (row0 + r) * lda + k0;
                            for (std::size_t kk = 0; kk < kc; ++kk) dst[kk * MR + r] = src[kk];
                        } else {
                            for (std::size_t kk = 0; kk < kc; ++kk) dst[kk * MR + r] = T(0);
                        }
                    }
                } else {
                    for (std::size_t kk = 0; kk < kc; ++kk) {
                        const T* src = a + (k0 + kk) * lda + row0;
                        T* out = dst + kk * MR;
                        std::copy(src, src + height, out);
                        std::fill(out + height, out + MR, T(0));
                    }
                }
            }

            for (std::size_t p = 0; p < b_panels; ++p) {
                const std::size_t col0 = j0 + p * NR;
                const std::size_t width = std::min(NR, n - col0);
                const T* pb = packed_b.data() + p * kc * NR;
                for (std::size_t q = 0; q < a_panels; ++q) {
                    const std::size_t row0 = q * MR;
                    const std::size_t height = std::min(MR, m - row0);
                    const T* pa = packed_a.data() + q * kc * MR;
                    if (height == MR && width == NR) {
                        gemm_micro_kernel<T>(kc, pa, pb, c + row0 * ldc + col0, ldc);
                    } else {
                        std::fill(tile, tile + MR * NR, T(0));
                        gemm_micro_kernel<T>(kc, pa, pb, tile, NR);
                        for (std::size_t r = 0; r < height; ++r) {
                            for (std::size_t j = 0; j < width; ++j) c[(row0 + r) * ldc + col0 + j] += tile[r * NR + j];
                        }
                    }
                }
            }
        }
    }
}

} // namespace cnnga::detail
