#include "camenn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "camenn/errors.hpp"

namespace camenn {

namespace {

constexpr const char* kMagic = "CAMENN-CHECKPOINT";

template <class U>
U to_little(U v) {
    if constexpr (std::endian::native == std::endian::big) {
        U out = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) out = (out << 8) | ((v >> (8 * i)) & 0xff);
        return out;
    }
    return v;
}

const char* dtype_name(DType t) { return t == DType::F64 ? "f64" : "f32"; }

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
    out << kMagic << ' ' << kCheckpointVersion << '\n' << "tensors " << tensors.size() << '\n';
    for (const auto& nt : tensors) {
        if (nt.name.empty() || nt.name.find_first_of(" \t\n") != std::string::npos)
            throw ContractError("checkpoint tensor name '" + nt.name + "' is empty or contains whitespace");
        out << nt.name << ' ' << dtype_name(nt.dtype) << ' ' << nt.tensor.rank();
        for (auto d : nt.tensor.shape()) out << ' ' << d;
        out << '\n';
    }
    out << "end\n";
    for (const auto& nt : tensors) {
        for (double v : nt.tensor.data()) {
            if (nt.dtype == DType::F64) {
                const auto bits = to_little(std::bit_cast<std::uint64_t>(v));
                out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
            } else {
                const auto bits = to_little(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
                out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
            }
        }
    }
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open checkpoint " + path.string(), 0);

    std::string line;
    std::size_t lineno = 1;
    if (!std::getline(in, line)) throw ParseError("empty checkpoint", lineno);
    {
        std::istringstream ls(line);
        std::string magic;
        int version = 0;
        if (!(ls >> magic >> version) || magic != kMagic) throw ParseError("not a checkpoint file", lineno);
        if (version != kCheckpointVersion)
            throw ParseError("unsupported checkpoint version " + std::to_string(version), lineno);
    }
    ++lineno;
    std::size_t count = 0;
    {
        if (!std::getline(in, line)) throw ParseError("missing tensor count", lineno);
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key >> count) || key != "tensors") throw ParseError("malformed tensor count", lineno);
    }

    std::vector<NamedTensor> result;
    result.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        ++lineno;
        if (!std::getline(in, line)) throw ParseError("header ends before tensor " + std::to_string(i), lineno);
        std::istringstream ls(line);
        NamedTensor nt;
        std::string dtype;
        std::size_t rank = 0;
        if (!(ls >> nt.name >> dtype >> rank) || rank == 0) throw ParseError("malformed tensor header", lineno);
        if (dtype == "f64")
            nt.dtype = DType::F64;
        else if (dtype == "f32")
            nt.dtype = DType::F32;
        else
            throw ParseError("unknown dtype '" + dtype + "'", lineno);
        Shape shape(rank);
        for (auto& d : shape)
            if (!(ls >> d) || d == 0) throw ParseError("malformed shape for " + nt.name, lineno);
        nt.tensor = Tensor(std::move(shape));
        result.push_back(std::move(nt));
    }
    ++lineno;
    if (!std::getline(in, line) || line != "end") throw ParseError("missing header terminator", lineno);

    for (auto& nt : result) {
        for (auto& v : nt.tensor.data()) {
            if (nt.dtype == DType::F64) {
                std::uint64_t bits = 0;
                if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits))
                    throw ParseError("payload truncated in tensor " + nt.name, 0);
                v = std::bit_cast<double>(to_little(bits));
            } else {
                std::uint32_t bits = 0;
                if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits))
                    throw ParseError("payload truncated in tensor " + nt.name, 0);
                v = static_cast<double>(std::bit_cast<float>(to_little(bits)));
            }
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) throw ParseError("trailing bytes after payload", 0);
    return result;
}

const NamedTensor* try_find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
    for (const auto& nt : tensors)
        if (nt.name == name) return &nt;
    return nullptr;
}

const NamedTensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
    if (const auto* nt = try_find_tensor(tensors, name)) return *nt;
    throw ParseError("checkpoint has no tensor '" + name + "'", 0);
}

}  // namespace camenn
