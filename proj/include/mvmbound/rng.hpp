// Copyright 2026 The mvmbound Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace mvmb {

/**
 * Philox4x32-10 counter-based generator. Streams are independent for
 * different (seed, stream) pairs, so every Monte Carlo path owns a stream
 * and results do not depend on the thread schedule.
 */
class Philox {
  public:
    Philox(uint64_t seed, uint64_t stream)
        : key0_(static_cast<uint32_t>(seed)), key1_(static_cast<uint32_t>(seed >> 32)),
          hi_(stream), lo_(0) {}

    double uniform() {
        if (uq_ < 2) refill();
        const uint32_t a = u_[--uq_];
        const uint32_t b = u_[--uq_];
        const uint64_t bits = (static_cast<uint64_t>(a) << 32) | b;
        return ((bits >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    }

    /// standard normal via Box-Muller, one spare cached
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const double u2 = uniform();
        const double rad = std::sqrt(-2.0 * std::log(u1));
        const double ang = 6.283185307179586476925287 * u2;
        spare_ = rad * std::sin(ang);
        have_spare_ = true;
        return rad * std::cos(ang);
    }

  private:
    static constexpr uint32_t kM0 = 0xD2511F53u;
    static constexpr uint32_t kM1 = 0xCD9E8D57u;
    static constexpr uint32_t kW0 = 0x9E3779B9u;
    static constexpr uint32_t kW1 = 0xBB67AE85u;

    void refill() {
        uint32_t c0 = static_cast<uint32_t>(lo_);
        uint32_t c1 = static_cast<uint32_t>(lo_ >> 32);
        uint32_t c2 = static_cast<uint32_t>(hi_);
        uint32_t c3 = static_cast<uint32_t>(hi_ >> 32);
        uint32_t k0 = key0_, k1 = key1_;
        for (int round = 0; round < 10; ++round) {
            const uint64_t p0 = static_cast<uint64_t>(kM0) * c0;
            const uint64_t p1 = static_cast<uint64_t>(kM1) * c2;
            const uint32_t h0 = static_cast<uint32_t>(p0 >> 32), l0 = static_cast<uint32_t>(p0);
            const uint32_t h1 = static_cast<uint32_t>(p1 >> 32), l1 = static_cast<uint32_t>(p1);
            const uint32_t n0 = h1 ^ c1 ^ k0;
            const uint32_t n1 = l1;
            const uint32_t n2 = h0 ^ c3 ^ k1;
            const uint32_t n3 = l0;
            c0 = n0;
            c1 = n1;
            c2 = n2;
            c3 = n3;
            k0 += kW0;
            k1 += kW1;
        }
        u_[0] = c0;
        u_[1] = c1;
        u_[2] = c2;
        u_[3] = c3;
        uq_ = 4;
        ++lo_;
    }

    uint32_t key0_, key1_;
    uint64_t hi_, lo_;
    std::array<uint32_t, 4> u_{};
    int uq_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace mvmb
