#pragma once

#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "mp/common.hpp"

namespace mp {

// Dense row-major float tensor, rank 1..4. Rank-4 reads as N x C x H x W.
class Tensor {
  public:
    std::vector<int> shape;
    std::vector<float> data;
    bool requires_grad = false;

    Tensor() = default;

    explicit Tensor(std::vector<int> s, float fill = 0.f) : shape(std::move(s)) {
        validate_shape();
        data.assign(static_cast<size_t>(size()), fill);
    }

    Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
        validate_shape();
        if (static_cast<size_t>(size()) != data.size())
            throw ContractError("tensor data length does not match shape product");
    }

    int rank() const { return static_cast<int>(shape.size()); }

    int64_t size() const {
        int64_t n = 1;
        for (int e : shape) n *= e;
        return n;
    }

    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    // rank-4 accessors
    float& at(int n, int c, int h, int w) {
        return data[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    float at(int n, int c, int h, int w) const {
        return data[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << "]";
        return os.str();
    }

    static Tensor full(std::vector<int> s, float v) { return Tensor(std::move(s), v); }

    static Tensor randn(std::vector<int> s, Rng& rng, float stddev = 1.f) {
        Tensor t(std::move(s));
        for (auto& v : t.data) v = rng.gaussian(0.f, stddev);
        return t;
    }

  private:
    void validate_shape() const {
        if (shape.empty() || shape.size() > 4)
            throw ContractError("tensor rank must be 1..4, got rank " +
                                std::to_string(shape.size()));
        for (size_t i = 0; i < shape.size(); ++i)
            if (shape[i] < 1)
                throw ContractError("tensor extent on axis " + std::to_string(i) +
                                    " must be >= 1, got " + std::to_string(shape[i]));
    }
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw ContractError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                            b.shape_str());
}

}  // namespace mp
