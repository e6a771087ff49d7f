#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "reprompt/numerics/nn.hpp"
#include "reprompt/numerics/tensor.hpp"

namespace reprompt::numerics {

/// 64-bit FNV-1a, stable across platforms with the same endianness.
class Fnv1a {
public:
    void update(const void* bytes, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(bytes);
        for (std::size_t i = 0; i < n; ++i) {
            state_ ^= p[i];
            state_ *= 0x100000001b3ULL;
        }
    }
    void update(std::string_view s) { update(s.data(), s.size()); }
    template <typename T>
    void update_value(const T& v) {
        update(&v, sizeof(T));
    }
    std::uint64_t digest() const { return state_; }

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t hash_tensors(const NamedTensors& tensors) {
    Fnv1a h;
    for (const auto& [name, t] : tensors) {
        h.update(name);
        for (std::size_t d : t.shape()) h.update_value(static_cast<std::uint64_t>(d));
        h.update(t.data().data(), t.size() * sizeof(double));
    }
    return h.digest();
}

inline std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return s;
}

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace io {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw FormatError("truncated binary stream");
    return v;
}

inline void write_string(std::ostream& os, std::string_view s) {
    write_pod(os, static_cast<std::uint64_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
    const auto n = read_pod<std::uint64_t>(is);
    if (n > (1ULL << 32)) throw FormatError("implausible string length in binary stream");
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw FormatError("truncated binary stream");
    return s;
}

inline void write_doubles(std::ostream& os, std::span<const double> values) {
    write_pod(os, static_cast<std::uint64_t>(values.size()));
    os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
}

inline std::vector<double> read_doubles(std::istream& is) {
    const auto n = read_pod<std::uint64_t>(is);
    if (n > (1ULL << 32)) throw FormatError("implausible array length in binary stream");
    std::vector<double> v(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw FormatError("truncated binary stream");
    return v;
}

/// name, ndim, dims..., values
inline void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
    write_string(os, name);
    write_pod(os, static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d : t.shape()) write_pod(os, static_cast<std::uint64_t>(d));
    write_doubles(os, t.data());
}

inline std::pair<std::string, Tensor> read_tensor(std::istream& is, bool requires_grad) {
    std::string name = read_string(is);
    const auto ndim = read_pod<std::uint32_t>(is);
    if (ndim == 0 || ndim > 8) throw FormatError("tensor '" + name + "' has invalid rank");
    Shape shape(ndim);
    for (auto& d : shape) d = static_cast<std::size_t>(read_pod<std::uint64_t>(is));
    auto values = read_doubles(is);
    if (shape_size(shape) != values.size()) throw FormatError("tensor '" + name + "' shape/data mismatch");
    return {std::move(name), Tensor(std::move(shape), std::move(values), requires_grad)};
}

}  // namespace io
}  // namespace reprompt::numerics
