#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace mp {

// Exit codes used by the CLI: 2 input format, 3 contract/shape, 4 numerical.
struct Error : std::runtime_error {
    int exit_code;
    Error(const std::string& msg, int code) : std::runtime_error(msg), exit_code(code) {}
};

struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error(msg, 2) {}
};

struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error(msg, 3) {}
};

struct MissingWeightError : ContractError {
    explicit MissingWeightError(const std::string& name)
        : ContractError("missing weight tensor: " + name) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg, 4) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

// Deterministic RNG. std::normal_distribution is implementation-defined, so
// gaussians are drawn via Box-Muller from the raw mt19937 stream.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(static_cast<uint32_t>(seed)) {}

    float uniform(float lo = 0.f, float hi = 1.f) {
        // 24 mantissa-safe bits
        uint32_t r = gen_() >> 8;
        float u = static_cast<float>(r) * (1.0f / 16777216.0f);
        return lo + (hi - lo) * u;
    }

    float gaussian(float mean = 0.f, float stddev = 1.f) {
        if (have_spare_) {
            have_spare_ = false;
            return mean + stddev * spare_;
        }
        float u1 = uniform(), u2 = uniform();
        if (u1 < 1e-12f) u1 = 1e-12f;
        float mag = std::sqrt(-2.0f * std::log(u1));
        spare_ = mag * std::sin(6.2831853071795864769f * u2);
        have_spare_ = true;
        return mean + stddev * mag * std::cos(6.2831853071795864769f * u2);
    }

    uint32_t next_u32() { return gen_(); }

    int uniform_int(int lo, int hi) {  // inclusive
        return lo + static_cast<int>(gen_() % static_cast<uint32_t>(hi - lo + 1));
    }

  private:
    std::mt19937 gen_;
    bool have_spare_ = false;
    float spare_ = 0.f;
};

inline float clampf(float v, float lo, float hi) {
    return v < lo ? lo : (v > hi ? hi : v);
}

}  // namespace mp
