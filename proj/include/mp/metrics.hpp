#pragma once

#include <array>
#include <cmath>

#include "mp/tensor.hpp"

namespace mp {

// PSNR over unit-range images: 10*log10(1/MSE), capped at 99 dB for MSE<1e-10.
inline float psnr(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "psnr");
    double mse = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse < 1e-10) return 99.f;
    return static_cast<float>(10.0 * std::log10(1.0 / mse));
}

namespace metrics_detail {

// 11x11 gaussian window, sigma 1.5, normalized to sum 1
inline const std::array<double, 11>& ssim_window() {
    static const std::array<double, 11> w = [] {
        std::array<double, 11> v{};
        double sum = 0.0;
        for (int i = 0; i < 11; ++i) {
            const double d = i - 5;
            v[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
            sum += v[static_cast<size_t>(i)];
        }
        for (auto& x : v) x /= sum;
        return v;
    }();
    return w;
}

}  // namespace metrics_detail

// Mean SSIM with an 11x11 separable gaussian window (valid positions only)
// and the standard unit-range stabilizers C1=(0.01)^2, C2=(0.03)^2, averaged
// over channels.
inline float ssim(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "ssim");
    require(a.rank() == 4, "ssim: expects [1,C,H,W] images");
    const int C = a.dim(1), H = a.dim(2), W = a.dim(3);
    require(H >= 11 && W >= 11, "ssim: images must be at least 11x11");
    const auto& win = metrics_detail::ssim_window();
    constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    double total = 0.0;
    int64_t count = 0;
    for (int c = 0; c < C; ++c)
        for (int y = 0; y + 11 <= H; ++y)
            for (int x = 0; x + 11 <= W; ++x) {
                double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
                for (int i = 0; i < 11; ++i)
                    for (int j = 0; j < 11; ++j) {
                        const double wgt = win[static_cast<size_t>(i)] *
                                           win[static_cast<size_t>(j)];
                        const double va = a.at(0, c, y + i, x + j);
                        const double vb = b.at(0, c, y + i, x + j);
                        mu_a += wgt * va;
                        mu_b += wgt * vb;
                        aa += wgt * va * va;
                        bb += wgt * vb * vb;
                        ab += wgt * va * vb;
                    }
                const double var_a = aa - mu_a * mu_a;
                const double var_b = bb - mu_b * mu_b;
                const double cov = ab - mu_a * mu_b;
                total += ((2 * mu_a * mu_b + C1) * (2 * cov + C2)) /
                         ((mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2));
                ++count;
            }
    return static_cast<float>(total / static_cast<double>(count));
}

}  // namespace mp
