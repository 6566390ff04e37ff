#pragma once

#include <fmt/format.h>

#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "hypctrl/core.hpp"
#include "hypctrl/simulator.hpp"

namespace hypctrl::io {

inline std::string num(double v) { return fmt::format("{:.12g}", v); }

/// One row per grid point: x, w1..wn.
inline void write_snapshot_csv(std::ostream& os, const StateField& s, const std::string& prefix = "w") {
    os << "x";
    for (std::size_t i = 0; i < s.n(); ++i) os << ',' << prefix << i + 1;
    os << '\n';
    for (std::size_t q = 0; q <= s.N(); ++q) {
        os << num(static_cast<double>(q) * s.h());
        for (std::size_t i = 0; i < s.n(); ++i) os << ',' << num(s.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(q)));
        os << '\n';
    }
}

/// t, L2 per component, then L-infinity per component.
inline void write_norms_csv(std::ostream& os, const std::vector<NormSample>& norms, std::size_t stride = 1) {
    if (norms.empty()) return;
    const auto n = norms.front().l2.size();
    os << "t";
    for (Eigen::Index i = 0; i < n; ++i) os << ",l2_" << i + 1;
    for (Eigen::Index i = 0; i < n; ++i) os << ",linf_" << i + 1;
    os << '\n';
    stride = std::max<std::size_t>(1, stride);
    for (std::size_t s = 0; s < norms.size(); ++s) {
        if (s % stride != 0 && s + 1 != norms.size()) continue;
        os << num(norms[s].t);
        for (Eigen::Index i = 0; i < n; ++i) os << ',' << num(norms[s].l2[i]);
        for (Eigen::Index i = 0; i < n; ++i) os << ',' << num(norms[s].linf[i]);
        os << '\n';
    }
}

/// t, W_{k+1}..W_{k+m} at the sample times.
inline void write_control_csv(std::ostream& os, const ControlSignal& c, std::size_t k) {
    os << "t";
    for (std::size_t j = 0; j < c.m(); ++j) os << ",W" << k + j + 1;
    os << '\n';
    for (std::size_t p = 0; p < c.times.size(); ++p) {
        os << num(c.times[p]);
        for (std::size_t j = 0; j < c.m(); ++j) os << ',' << num(c.values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(p)));
        os << '\n';
    }
}

/// Header: uint64 n, uint64 N, double t; then n*(N+1) doubles, row-major
/// (component-major). Host byte order.
inline void write_snapshot_binary(std::ostream& os, const StateField& s) {
    const std::uint64_t n = s.n(), N = s.N();
    os.write(reinterpret_cast<const char*>(&n), sizeof n);
    os.write(reinterpret_cast<const char*>(&N), sizeof N);
    os.write(reinterpret_cast<const char*>(&s.t), sizeof s.t);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t q = 0; q <= N; ++q) {
            const double v = s.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(q));
            os.write(reinterpret_cast<const char*>(&v), sizeof v);
        }
}

inline StateField read_snapshot_binary(std::istream& is) {
    std::uint64_t n = 0, N = 0;
    double t = 0.0;
    is.read(reinterpret_cast<char*>(&n), sizeof n);
    is.read(reinterpret_cast<char*>(&N), sizeof N);
    is.read(reinterpret_cast<char*>(&t), sizeof t);
    if (!is || n == 0 || n > (1u << 20) || N > (1u << 28)) throw Error(ErrorCode::ParseError, "bad snapshot header");
    StateField s(static_cast<std::size_t>(n), static_cast<std::size_t>(N), t);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t q = 0; q <= N; ++q) {
            double v = 0.0;
            is.read(reinterpret_cast<char*>(&v), sizeof v);
            s.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(q)) = v;
        }
    if (!is) throw Error(ErrorCode::ParseError, "truncated snapshot payload");
    return s;
}

inline std::ofstream open_out(const std::string& path, bool binary = false) {
    std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
    if (!os) throw Error(ErrorCode::ConfigError, "cannot write " + path);
    return os;
}

}  // namespace hypctrl::io
