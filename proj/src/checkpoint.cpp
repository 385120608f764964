#include "zsdg/checkpoint.hpp"

#include "zsdg/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <unistd.h>

namespace zsdg {

namespace {

constexpr char kMagic[5] = {'Z', 'S', 'D', 'G', '1'};

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
    }
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <typename T>
    T get(const char* what) {
        need(sizeof(T), what);
        T value = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            value |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
        }
        pos_ += sizeof(T);
        return value;
    }

    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        need(n, what);
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n) {
            throw FormatError(std::string("truncated payload while reading ") + what + " at byte " +
                              std::to_string(pos_));
        }
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_tensors(std::span<const NamedTensor> tensors) {
    if (tensors.size() > std::numeric_limits<std::uint32_t>::max()) {
        throw FormatError("too many tensors for container");
    }
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, tensor] : tensors) {
        if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
            throw FormatError("tensor name longer than 65535 bytes");
        }
        if (tensor.rank() > std::numeric_limits<std::uint8_t>::max()) {
            throw FormatError("tensor '" + name + "' has rank above 255");
        }
        put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(static_cast<std::uint8_t>(tensor.rank()));
        for (std::size_t d : tensor.shape()) {
            if (d > std::numeric_limits<std::uint32_t>::max()) {
                throw FormatError("dim overflow: tensor '" + name + "' has a dimension above 2^32-1");
            }
            put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        }
        out.reserve(out.size() + 8 * tensor.size());
        for (double v : tensor.values()) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

std::vector<NamedTensor> decode_tensors(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    auto magic = r.take(sizeof(kMagic), "magic");
    if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) {
        throw FormatError("bad magic '" + std::string(magic.begin(), magic.end()) +
                          "' (expected ZSDG1)");
    }
    const auto count = r.get<std::uint32_t>("tensor count");
    std::vector<NamedTensor> out;
    for (std::uint32_t t = 0; t < count; ++t) {
        const auto len = r.get<std::uint16_t>("name length");
        auto name_bytes = r.take(len, "name");
        std::string name(name_bytes.begin(), name_bytes.end());
        const auto rank = r.get<std::uint8_t>("rank");
        Shape shape;
        for (std::uint8_t k = 0; k < rank; ++k) shape.push_back(r.get<std::uint32_t>("dims"));
        std::size_t n = 0;
        try {
            n = shape_size(shape);
        } catch (const ShapeError&) {
            throw FormatError("dim overflow: tensor '" + name + "' has shape " + shape_string(shape));
        }
        if (n > r.remaining() / 8) {
            throw FormatError("truncated payload: tensor '" + name + "' declares " +
                              std::to_string(n) + " values but " +
                              std::to_string(r.remaining()) + " bytes remain");
        }
        std::vector<double> values(n);
        for (auto& v : values) v = std::bit_cast<double>(r.get<std::uint64_t>("values"));
        out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    if (!r.done()) {
        throw FormatError(std::to_string(r.remaining()) + " trailing bytes after last tensor");
    }
    return out;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    const auto tmp = path.string() + ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw IoError("failed writing " + tmp);
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot replace " + path.string());
    }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_tensor_file(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
    write_file_atomic(path, encode_tensors(tensors));
}

std::vector<NamedTensor> read_tensor_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    try {
        return decode_tensors(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path) {
    std::vector<NamedTensor> tensors;
    for (const auto& [name, t] : bundle.named_parameters()) tensors.emplace_back(name, *t);
    write_tensor_file(path, tensors);
}

ModelBundle load_checkpoint(const std::filesystem::path& path) {
    const auto tensors = read_tensor_file(path);
    try {
        return bundle_from_named(tensors);
    } catch (const ShapeError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace zsdg
