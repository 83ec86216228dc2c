#pragma once

#include <Eigen/Core>

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>

namespace unlearn::binio {

inline std::uint64_t to_le(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        std::uint64_t r = 0;
        for (int i = 0; i < 8; ++i) r = (r << 8) | ((v >> (8 * i)) & 0xff);
        return r;
    }
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
    const std::uint64_t le = to_le(v);
    os.write(reinterpret_cast<const char*>(&le), 8);
}

inline std::uint64_t read_u64(std::istream& is) {
    std::uint64_t le = 0;
    is.read(reinterpret_cast<char*>(&le), 8);
    return to_le(le);
}

inline void write_f64_block(std::ostream& os, const Eigen::ArrayXd& a) {
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        write_u64(os, std::bit_cast<std::uint64_t>(a[i]));
    }
}

inline void read_f64_block(std::istream& is, Eigen::ArrayXd& a) {
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        a[i] = std::bit_cast<double>(read_u64(is));
    }
}

} // namespace unlearn::binio
