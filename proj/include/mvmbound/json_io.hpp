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

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "mvmbound/hjb.hpp"
#include "mvmbound/measures.hpp"
#include "mvmbound/payoffs.hpp"

namespace mvmb {

using nlohmann::json;

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << content;
}

/** Minimal SHA-256, used for input digests in run manifests. */
inline std::string sha256_hex(const std::string& data) {
    static constexpr uint32_t K[64] = {
        0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4,
        0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe,
        0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f,
        0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7,
        0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc,
        0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
        0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116,
        0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
        0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7,
        0xc67178f2};
    uint32_t h[8] = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                     0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
    std::string msg = data;
    const uint64_t bitlen = static_cast<uint64_t>(msg.size()) * 8;
    msg.push_back(static_cast<char>(0x80));
    while (msg.size() % 64 != 56) msg.push_back('\0');
    for (int i = 7; i >= 0; --i) msg.push_back(static_cast<char>((bitlen >> (8 * i)) & 0xff));

    auto rotr = [](uint32_t x, int n) { return (x >> n) | (x << (32 - n)); };
    for (std::size_t off = 0; off < msg.size(); off += 64) {
        uint32_t w[64];
        for (int i = 0; i < 16; ++i)
            w[i] = (static_cast<uint8_t>(msg[off + 4 * i]) << 24) |
                   (static_cast<uint8_t>(msg[off + 4 * i + 1]) << 16) |
                   (static_cast<uint8_t>(msg[off + 4 * i + 2]) << 8) |
                   static_cast<uint8_t>(msg[off + 4 * i + 3]);
        for (int i = 16; i < 64; ++i) {
            const uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
            const uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
            w[i] = w[i - 16] + s0 + w[i - 7] + s1;
        }
        uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4], f = h[5], g = h[6], hh = h[7];
        for (int i = 0; i < 64; ++i) {
            const uint32_t S1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
            const uint32_t ch = (e & f) ^ (~e & g);
            const uint32_t t1 = hh + S1 + ch + K[i] + w[i];
            const uint32_t S0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
            const uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
            const uint32_t t2 = S0 + maj;
            hh = g;
            g = f;
            f = e;
            e = d + t1;
            d = c;
            c = b;
            b = a;
            a = t1 + t2;
        }
        h[0] += a;
        h[1] += b;
        h[2] += c;
        h[3] += d;
        h[4] += e;
        h[5] += f;
        h[6] += g;
        h[7] += hh;
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (uint32_t v : h)
        for (int i = 7; i >= 0; --i) out.push_back(hex[(v >> (4 * i)) & 0xf]);
    return out;
}

// ---- measures ----

inline json measure_to_json(const AtomicMeasure& m) {
    return json{{"atoms", m.atoms()}, {"weights", m.weights()}};
}

inline AtomicMeasure measure_from_json(const json& j, bool allow_negative = false) {
    if (!j.contains("atoms") || !j.contains("weights"))
        throw std::invalid_argument("measure json needs 'atoms' and 'weights'");
    return AtomicMeasure(j["atoms"].get<std::vector<double>>(),
                         j["weights"].get<std::vector<double>>(), allow_negative);
}

inline AtomicMeasure load_measure(const std::string& path, bool allow_negative = false) {
    return measure_from_json(json::parse(read_file(path)), allow_negative);
}

// ---- payoffs ----

inline json payoff_to_json(const Payoff& p) {
    return json{{"kind", "piecewise"},
                {"breakpoints", p.breakpoints()},
                {"slopes", p.slopes()},
                {"value_at_first_breakpoint", p.breakpoint_values().front()}};
}

inline Payoff payoff_from_json(const json& j) {
    const std::string kind = j.value("kind", "");
    if (kind == "call") return call(j.at("strike").get<double>());
    if (kind == "call_spread") return call_spread(j.at("k1").get<double>(), j.at("k2").get<double>());
    if (kind == "piecewise")
        return Payoff(j.at("breakpoints").get<std::vector<double>>(),
                      j.at("slopes").get<std::vector<double>>(),
                      j.value("value_at_first_breakpoint", 0.0));
    throw std::invalid_argument("payoff json: unknown kind '" + kind + "'");
}

inline Payoff load_payoff(const std::string& path) {
    return payoff_from_json(json::parse(read_file(path)));
}

// ---- time weights ----

inline TimeWeight weight_from_json(const json& j) {
    const std::string kind = j.value("kind", "constant");
    if (kind == "constant") return TimeWeight::constant();
    if (kind == "piecewise")
        return TimeWeight::piecewise(j.at("times").get<std::vector<double>>(),
                                     j.at("values").get<std::vector<double>>());
    throw std::invalid_argument("weight json: unknown kind '" + kind + "'");
}

inline TimeWeight load_weight(const std::string& path) {
    return weight_from_json(json::parse(read_file(path)));
}

// ---- call quote curves (CSV strike,price) ----

inline CallQuoteCurve load_call_curve(const std::string& path) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty call curve " + path);
    // tolerate an optional header
    CallQuoteCurve curve;
    auto parse_row = [&](const std::string& row) {
        const auto comma = row.find(',');
        if (comma == std::string::npos) return false;
        try {
            curve.strikes.push_back(std::stod(row.substr(0, comma)));
            curve.prices.push_back(std::stod(row.substr(comma + 1)));
        } catch (...) {
            return false;
        }
        return true;
    };
    if (!parse_row(line) && line.find("strike") == std::string::npos)
        throw std::runtime_error("call curve " + path + ": bad first row");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (!parse_row(line)) throw std::runtime_error("call curve " + path + ": bad row " + line);
    }
    return curve;
}

inline std::string call_curve_to_csv(const CallQuoteCurve& curve) {
    std::ostringstream out;
    out << "strike,price\n";
    out.precision(17);
    for (std::size_t i = 0; i < curve.strikes.size(); ++i)
        out << curve.strikes[i] << "," << curve.prices[i] << "\n";
    return out.str();
}

// ---- surfaces (policy view used by simulate --policy from-surface) ----

inline json surface_policy_to_json(const ValueSurface& vs) {
    json tags = json::array();
    for (const auto& p : vs.start_policy()) {
        json t;
        t["action"] = p.action == NodeAction::Diffuse
                          ? "diffuse"
                          : (p.action == NodeAction::Terminal ? "terminal" : "wait");
        if (p.action == NodeAction::Diffuse) {
            json sup = json::array();
            for (int q = 0; q < 4; ++q)
                if (p.support[q] >= 0) sup.push_back(p.support[q]);
            t["support"] = sup;
        }
        tags.push_back(t);
    }
    return json{{"support", vs.support()},
                {"horizon", vs.horizon()},
                {"n_simplex", vs.grid().n()},
                {"k", vs.grid().k()},
                {"tolerance", vs.tolerance()},
                {"value_at_anchor_nodes", vs.row(0)},
                {"a_lo", vs.a_lo()},
                {"a_hi", vs.a_hi()},
                {"n_avg", vs.n_avg()},
                {"start_policy", tags}};
}

struct StoredSurfacePolicy {
    std::vector<double> support;
    double horizon = 1.0;
    int k = 0;
    int n_simplex = 0;
    std::vector<PolicyNode> tags;
};

inline StoredSurfacePolicy surface_policy_from_json(const json& j) {
    StoredSurfacePolicy out;
    out.support = j.at("support").get<std::vector<double>>();
    out.horizon = j.at("horizon").get<double>();
    out.k = j.at("k").get<int>();
    out.n_simplex = j.at("n_simplex").get<int>();
    for (const auto& t : j.at("start_policy")) {
        PolicyNode p;
        const std::string action = t.at("action").get<std::string>();
        if (action == "diffuse") {
            p.action = NodeAction::Diffuse;
            int q = 0;
            for (const auto& s : t.at("support")) p.support[q++] = s.get<int32_t>();
        } else if (action == "terminal") {
            p.action = NodeAction::Terminal;
        }
        out.tags.push_back(p);
    }
    return out;
}

// ---- run manifests ----

struct RunManifest {
    std::string command;
    std::string version;
    json config;
    json input_digests = json::object();
    uint64_t seed = 0;

    void add_input(const std::string& path) { input_digests[path] = sha256_hex(read_file(path)); }

    json to_json() const {
        return json{{"command", command},
                    {"version", version},
                    {"config", config},
                    {"inputs", input_digests},
                    {"seed", seed}};
    }

    void write(const std::string& path) const { write_file(path, to_json().dump(2) + "\n"); }
};

}  // namespace mvmb
