// Copyright 2026-present the emcar project
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

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include <zlib.h>

#include "emcar/matcher.hpp"

namespace emcar::matcher {

namespace {

static_assert(std::endian::native == std::endian::little, "weights.bin is written in native little-endian order");

constexpr char kMagic[8] = {'E', 'M', 'C', 'A', 'R', 'W', '0', '1'};
constexpr const char* kFormat = "emcar-checkpoint-1";

template <class U>
void put(std::string& out, U v) {
    char buf[sizeof(U)];
    std::memcpy(buf, &v, sizeof(U));
    out.append(buf, sizeof(U));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <class U>
    U get() {
        U v;
        take(&v, sizeof(U));
        return v;
    }
    void take(void* dst, std::size_t n) {
        if (n > bytes_.size() - pos_) throw CheckpointError("weights.bin is truncated");
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }
    bool done() const noexcept { return pos_ == bytes_.size(); }

private:
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

std::uint32_t crc32_of(const std::string& bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
    std::size_t left = bytes.size();
    while (left > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
        crc = crc32(crc, p, chunk);
        p += chunk;
        left -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

std::string read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("missing checkpoint file: " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("cannot write " + path.string());
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const Model& model, const nlohmann::json& extra) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw CheckpointError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

    const auto& params = model.parameters();
    std::string bytes(kMagic, sizeof(kMagic));
    put<std::uint32_t>(bytes, static_cast<std::uint32_t>(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params.name(i);
        const Matrix<float>& m = params.value(i);
        put<std::uint32_t>(bytes, static_cast<std::uint32_t>(name.size()));
        bytes += name;
        put<std::uint64_t>(bytes, m.rows());
        put<std::uint64_t>(bytes, m.cols());
        bytes.append(reinterpret_cast<const char*>(m.data()), m.size() * sizeof(float));
    }
    write_all(dir / "weights.bin", bytes);
    model.tokenizer().save(dir / "vocab.txt");

    nlohmann::ordered_json manifest;
    manifest["format"] = kFormat;
    manifest["model"] = to_json(model.config());
    manifest["tensors"] = params.size();
    manifest["parameters"] = params.scalar_count();
    manifest["weights_crc32"] = crc32_of(bytes);
    for (const auto& [key, value] : extra.items()) manifest[key] = value;
    write_all(dir / "manifest.json", manifest.dump(2) + "\n");
}

Model load_checkpoint(const std::filesystem::path& dir, nlohmann::json* manifest_out) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_all(dir / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("manifest.json is not valid JSON: " + std::string(e.what()));
    }
    if (manifest.value("format", std::string()) != kFormat)
        throw CheckpointError("unsupported checkpoint format in " + (dir / "manifest.json").string());

    const std::string bytes = read_all(dir / "weights.bin");
    if (!manifest.contains("weights_crc32") || manifest["weights_crc32"].get<std::uint32_t>() != crc32_of(bytes))
        throw CheckpointError("weights.bin checksum does not match the manifest");

    serializer::WordPieceTokenizer tokenizer = [&] {
        try {
            return serializer::WordPieceTokenizer::from_vocab_file(dir / "vocab.txt");
        } catch (const Error& e) {
            throw CheckpointError(std::string("vocab.txt: ") + e.what());
        }
    }();
    ModelConfig config;
    try {
        config = model_config_from_json(manifest.at("model"));
    } catch (const std::exception& e) {
        throw CheckpointError(std::string("manifest model section: ") + e.what());
    }
    Model model(config, std::move(tokenizer), 0);

    Reader in(bytes);
    char magic[sizeof(kMagic)];
    in.take(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw CheckpointError("weights.bin has a bad magic number");
    auto& params = model.parameters();
    const auto count = in.get<std::uint32_t>();
    if (count != params.size())
        throw CheckpointError("weights.bin holds " + std::to_string(count) + " tensors, the model needs " +
                              std::to_string(params.size()));
    std::vector<bool> seen(params.size(), false);
    for (std::uint32_t k = 0; k < count; ++k) {
        std::string name(in.get<std::uint32_t>(), '\0');
        in.take(name.data(), name.size());
        const auto rows = in.get<std::uint64_t>(), cols = in.get<std::uint64_t>();
        const auto id = params.find(name);
        if (!id) throw CheckpointError("weights.bin has unknown tensor '" + name + "'");
        Matrix<float>& dst = params.value(*id);
        if (dst.rows() != rows || dst.cols() != cols)
            throw CheckpointError("tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                                  std::to_string(cols) + ", expected " + std::to_string(dst.rows()) + "x" +
                                  std::to_string(dst.cols()));
        in.take(dst.data(), dst.size() * sizeof(float));
        if (!dst.all_finite()) throw CheckpointError("tensor '" + name + "' holds non-finite values");
        seen[*id] = true;
    }
    if (!in.done()) throw CheckpointError("weights.bin has trailing bytes");
    if (std::find(seen.begin(), seen.end(), false) != seen.end())
        throw CheckpointError("weights.bin repeats a tensor");
    if (manifest_out) *manifest_out = std::move(manifest);
    return model;
}

}  // namespace emcar::matcher
