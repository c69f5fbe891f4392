#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "mp/ops.hpp"
#include "mp/tensor.hpp"

namespace mp {

using Point = std::array<float, 2>;

// Thin-plate spline fitted from 5 control-point pairs: affine part plus
// radial terms with kernel U(r) = r^2 log r^2 (U(0) = 0).
struct TpsTransform {
    std::array<Point, 5> control_src{};
    std::array<Point, 5> control_dst{};
    // out_x = affine[0]*x + affine[1]*y + affine[2] + sum_i radial[i][0]*U(|p - src_i|)
    // out_y = affine[3]*x + affine[4]*y + affine[5] + sum_i radial[i][1]*U(|p - src_i|)
    std::array<float, 6> affine{1.f, 0.f, 0.f, 0.f, 1.f, 0.f};
    std::array<std::array<float, 2>, 5> radial{};

    bool is_identity() const {
        if (affine != std::array<float, 6>{1.f, 0.f, 0.f, 0.f, 1.f, 0.f}) return false;
        for (const auto& r : radial)
            if (r[0] != 0.f || r[1] != 0.f) return false;
        return true;
    }
};

struct TpsDegenerateError : ContractError {
    double condition;
    explicit TpsDegenerateError(double cond)
        : ContractError("tps: degenerate control configuration, condition estimate " +
                        std::to_string(cond)),
          condition(cond) {}
};

namespace tps_detail {

inline double kernel_u(double r2) {
    if (r2 < 1e-20) return 0.0;
    return r2 * std::log(r2);
}

// Gaussian elimination with partial pivoting; solves A x = b for nrhs columns.
// Returns a crude condition estimate (max/min pivot magnitude).
inline double solve_dense(std::vector<double>& a, std::vector<double>& b, int n, int nrhs) {
    double maxp = 0.0, minp = 1e300;
    for (int col = 0; col < n; ++col) {
        int piv = col;
        for (int r = col + 1; r < n; ++r)
            if (std::fabs(a[static_cast<size_t>(r * n + col)]) >
                std::fabs(a[static_cast<size_t>(piv * n + col)]))
                piv = r;
        if (piv != col) {
            for (int c = 0; c < n; ++c)
                std::swap(a[static_cast<size_t>(col * n + c)], a[static_cast<size_t>(piv * n + c)]);
            for (int c = 0; c < nrhs; ++c)
                std::swap(b[static_cast<size_t>(col * nrhs + c)],
                          b[static_cast<size_t>(piv * nrhs + c)]);
        }
        const double p = a[static_cast<size_t>(col * n + col)];
        const double ap = std::fabs(p);
        maxp = std::max(maxp, ap);
        minp = std::min(minp, ap);
        if (ap < 1e-300) return 1e300;
        for (int r = col + 1; r < n; ++r) {
            const double f = a[static_cast<size_t>(r * n + col)] / p;
            if (f == 0.0) continue;
            for (int c = col; c < n; ++c)
                a[static_cast<size_t>(r * n + c)] -= f * a[static_cast<size_t>(col * n + c)];
            for (int c = 0; c < nrhs; ++c)
                b[static_cast<size_t>(r * nrhs + c)] -= f * b[static_cast<size_t>(col * nrhs + c)];
        }
    }
    for (int col = n - 1; col >= 0; --col) {
        const double p = a[static_cast<size_t>(col * n + col)];
        for (int c = 0; c < nrhs; ++c) {
            double acc = b[static_cast<size_t>(col * nrhs + c)];
            for (int k = col + 1; k < n; ++k)
                acc -= a[static_cast<size_t>(col * n + k)] * b[static_cast<size_t>(k * nrhs + c)];
            b[static_cast<size_t>(col * nrhs + c)] = acc / p;
        }
    }
    return minp > 0.0 ? maxp / minp : 1e300;
}

}  // namespace tps_detail

inline TpsTransform fit_tps(const std::array<Point, 5>& src, const std::array<Point, 5>& dst) {
    TpsTransform t;
    t.control_src = src;
    t.control_dst = dst;
    if (src == dst) return t;  // exact identity, no solve

    // [K P; P^T 0] [w; a] = [dst; 0], P row i = [1, x_i, y_i]
    constexpr int n = 8;
    std::vector<double> a(n * n, 0.0), b(n * 2, 0.0);
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j) {
            const double dx = src[i][0] - src[j][0];
            const double dy = src[i][1] - src[j][1];
            a[static_cast<size_t>(i * n + j)] = tps_detail::kernel_u(dx * dx + dy * dy);
        }
        a[static_cast<size_t>(i * n + 5)] = 1.0;
        a[static_cast<size_t>(i * n + 6)] = src[i][0];
        a[static_cast<size_t>(i * n + 7)] = src[i][1];
        a[static_cast<size_t>((5) * n + i)] = 1.0;
        a[static_cast<size_t>((6) * n + i)] = src[i][0];
        a[static_cast<size_t>((7) * n + i)] = src[i][1];
        b[static_cast<size_t>(i * 2)] = dst[i][0];
        b[static_cast<size_t>(i * 2 + 1)] = dst[i][1];
    }
    const double cond = tps_detail::solve_dense(a, b, n, 2);
    if (cond > 1e8) throw TpsDegenerateError(cond);
    for (int i = 0; i < 5; ++i) {
        t.radial[static_cast<size_t>(i)][0] = static_cast<float>(b[static_cast<size_t>(i * 2)]);
        t.radial[static_cast<size_t>(i)][1] =
            static_cast<float>(b[static_cast<size_t>(i * 2 + 1)]);
    }
    // rows 5,6,7 hold const, x, y coefficients
    t.affine = {static_cast<float>(b[6 * 2]),     static_cast<float>(b[7 * 2]),
                static_cast<float>(b[5 * 2]),     static_cast<float>(b[6 * 2 + 1]),
                static_cast<float>(b[7 * 2 + 1]), static_cast<float>(b[5 * 2 + 1])};
    return t;
}

inline Point tps_apply_point(const TpsTransform& t, const Point& p) {
    double ox = static_cast<double>(t.affine[0]) * p[0] + t.affine[1] * p[1] + t.affine[2];
    double oy = static_cast<double>(t.affine[3]) * p[0] + t.affine[4] * p[1] + t.affine[5];
    for (int i = 0; i < 5; ++i) {
        const double dx = p[0] - t.control_src[static_cast<size_t>(i)][0];
        const double dy = p[1] - t.control_src[static_cast<size_t>(i)][1];
        const double u = tps_detail::kernel_u(dx * dx + dy * dy);
        ox += t.radial[static_cast<size_t>(i)][0] * u;
        oy += t.radial[static_cast<size_t>(i)][1] * u;
    }
    return {static_cast<float>(ox), static_cast<float>(oy)};
}

// 2x2 Jacobian of the warp at p, row-major [dox/dx, dox/dy, doy/dx, doy/dy].
inline std::array<float, 4> tps_jacobian(const TpsTransform& t, const Point& p) {
    double j00 = t.affine[0], j01 = t.affine[1];
    double j10 = t.affine[3], j11 = t.affine[4];
    for (int i = 0; i < 5; ++i) {
        const double dx = p[0] - t.control_src[static_cast<size_t>(i)][0];
        const double dy = p[1] - t.control_src[static_cast<size_t>(i)][1];
        const double r2 = dx * dx + dy * dy;
        if (r2 < 1e-20) continue;  // dU -> 0 in the limit
        const double du = 2.0 * (std::log(r2) + 1.0);  // dU/dx = du * dx, etc.
        j00 += t.radial[static_cast<size_t>(i)][0] * du * dx;
        j01 += t.radial[static_cast<size_t>(i)][0] * du * dy;
        j10 += t.radial[static_cast<size_t>(i)][1] * du * dx;
        j11 += t.radial[static_cast<size_t>(i)][1] * du * dy;
    }
    return {static_cast<float>(j00), static_cast<float>(j01), static_cast<float>(j10),
            static_cast<float>(j11)};
}

// Evaluates the warp on a [1,h,w,2] grid of normalized coordinates.
inline Tensor tps_apply(const TpsTransform& t, const Tensor& grid) {
    if (grid.rank() != 4 || grid.dim(3) != 2)
        throw ContractError("tps_apply: grid must be [1,h,w,2], got " + grid.shape_str());
    if (t.is_identity()) return grid;
    Tensor out(grid.shape);
    const int64_t npts = grid.size() / 2;
    for (int64_t i = 0; i < npts; ++i) {
        const Point p{grid.data[static_cast<size_t>(i * 2)],
                      grid.data[static_cast<size_t>(i * 2 + 1)]};
        const Point q = tps_apply_point(t, p);
        out.data[static_cast<size_t>(i * 2)] = q[0];
        out.data[static_cast<size_t>(i * 2 + 1)] = q[1];
    }
    return out;
}

}  // namespace mp
