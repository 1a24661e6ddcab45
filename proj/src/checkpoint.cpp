// Copyright 2026 The Grove MoE Authors. All Rights Reserved.
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

#include "grove/checkpoint.hpp"

#include "grove/config_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include <fmt/format.h>

namespace grove {

using nlohmann::json;

std::string_view to_string(CheckpointErrc code) {
    switch (code) {
    case CheckpointErrc::io:
        return "io error";
    case CheckpointErrc::bad_magic:
        return "bad magic";
    case CheckpointErrc::truncated_payload:
        return "truncated payload";
    case CheckpointErrc::unknown_dtype:
        return "unknown dtype";
    case CheckpointErrc::bad_header:
        return "bad header";
    }
    return "unknown error";
}

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename U>
void put_le(std::vector<std::uint8_t> &out, U v) {
    for (std::size_t b = 0; b < sizeof(U); ++b)
        out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

template <typename U>
U get_le(const std::uint8_t *p) {
    U v = 0;
    for (std::size_t b = 0; b < sizeof(U); ++b)
        v |= static_cast<U>(p[b]) << (8 * b);
    return v;
}

std::size_t dtype_size(Dtype t) { return t == Dtype::f32 ? 4 : 8; }
const char *dtype_name(Dtype t) { return t == Dtype::f32 ? "f32" : "f64"; }

struct NamedTensor {
    std::string name;
    const Matrix *matrix;
};

std::vector<NamedTensor> tensor_table(const GroveLayer &layer, const Matrix &bias_row) {
    std::vector<NamedTensor> t;
    t.push_back({"router.weight", &layer.router.weight});
    t.push_back({"router.bias", &bias_row});
    for (std::size_t i = 0; i < layer.experts.size(); ++i) {
        t.push_back({fmt::format("experts.{}.gate", i), &layer.experts[i].gate});
        t.push_back({fmt::format("experts.{}.up", i), &layer.experts[i].up});
        t.push_back({fmt::format("experts.{}.down", i), &layer.experts[i].down});
    }
    for (std::size_t j = 0; j < layer.adjugates.size(); ++j) {
        t.push_back({fmt::format("adjugates.{}.gate", j), &layer.adjugates[j].gate});
        t.push_back({fmt::format("adjugates.{}.up", j), &layer.adjugates[j].up});
        t.push_back({fmt::format("adjugates.{}.down", j), &layer.adjugates[j].down});
    }
    return t;
}

[[noreturn]] void fail(CheckpointErrc code, const std::string &what) { throw CheckpointError(code, what); }

} // namespace

std::vector<std::uint8_t> serialize(const GroveLayer &layer, Dtype dtype) {
    layer.validate();
    const Matrix bias_row(1, layer.bias.size(), layer.bias);
    const auto tensors = tensor_table(layer, bias_row);

    json table = json::array();
    std::uint64_t offset = 0;
    for (const auto &t : tensors) {
        table.push_back({{"name", t.name},
                         {"shape", {t.matrix->rows(), t.matrix->cols()}},
                         {"dtype", dtype_name(dtype)},
                         {"offset", offset}});
        offset += t.matrix->size() * dtype_size(dtype);
    }
    const json header{{"kind", to_string(layer.kind)},
                      {"config", config_to_json(layer.config)},
                      {"origin", layer.origin},
                      {"tensors", table}};
    const std::string header_text = header.dump();

    std::vector<std::uint8_t> out;
    out.reserve(kCheckpointMagic.size() + 4 + header_text.size() + offset);
    out.insert(out.end(), kCheckpointMagic.begin(), kCheckpointMagic.end());
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header_text.size()));
    out.insert(out.end(), header_text.begin(), header_text.end());
    for (const auto &t : tensors) {
        for (double v : t.matrix->data()) {
            if (dtype == Dtype::f64)
                put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
            else
                put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        }
    }
    return out;
}

GroveLayer deserialize(std::span<const std::uint8_t> bytes) {
    const std::size_t magic_len = kCheckpointMagic.size();
    if (bytes.size() < magic_len || std::memcmp(bytes.data(), kCheckpointMagic.data(), magic_len) != 0)
        fail(CheckpointErrc::bad_magic, "file does not start with GROVEMOE1");
    if (bytes.size() < magic_len + 4)
        fail(CheckpointErrc::truncated_payload, "missing header length");
    const std::uint32_t header_len = get_le<std::uint32_t>(bytes.data() + magic_len);
    const std::size_t payload_start = magic_len + 4 + std::size_t{header_len};
    if (bytes.size() < payload_start)
        fail(CheckpointErrc::truncated_payload, "header runs past end of file");

    json header;
    try {
        header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(magic_len + 4),
                             bytes.begin() + static_cast<std::ptrdiff_t>(payload_start));
    } catch (const json::exception &e) {
        fail(CheckpointErrc::bad_header, std::string("header is not valid JSON: ") + e.what());
    }
    const std::span<const std::uint8_t> payload = bytes.subspan(payload_start);

    GroveLayer layer;
    std::map<std::string, Matrix> found;
    try {
        layer.kind = layer_kind_from_string(header.at("kind").get<std::string>());
        layer.config = config_from_json(header.at("config"));
        layer.origin = header.value("origin", std::string("init"));
        std::uint64_t expected_offset = 0;
        for (const auto &entry : header.at("tensors")) {
            const auto name = entry.at("name").get<std::string>();
            const auto dtype_str = entry.at("dtype").get<std::string>();
            Dtype dtype;
            if (dtype_str == "f64")
                dtype = Dtype::f64;
            else if (dtype_str == "f32")
                dtype = Dtype::f32;
            else
                fail(CheckpointErrc::unknown_dtype, fmt::format("tensor {} has dtype '{}'", name, dtype_str));
            const auto shape = entry.at("shape").get<std::vector<std::uint64_t>>();
            if (shape.size() != 2)
                fail(CheckpointErrc::bad_header, fmt::format("tensor {} is not rank 2", name));
            const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
            if (offset != expected_offset)
                fail(CheckpointErrc::bad_header, fmt::format("tensor {} is not packed at offset {}", name,
                                                             expected_offset));
            const std::uint64_t count = shape[0] * shape[1];
            const std::uint64_t nbytes = count * dtype_size(dtype);
            if (offset + nbytes > payload.size())
                fail(CheckpointErrc::truncated_payload,
                     fmt::format("tensor {} needs bytes [{}, {}) but payload has {}", name, offset, offset + nbytes,
                                 payload.size()));
            std::vector<double> data(count);
            const std::uint8_t *p = payload.data() + offset;
            for (std::uint64_t e = 0; e < count; ++e) {
                if (dtype == Dtype::f64)
                    data[e] = std::bit_cast<double>(get_le<std::uint64_t>(p + 8 * e));
                else
                    data[e] = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(p + 4 * e)));
            }
            if (!all_finite(data))
                fail(CheckpointErrc::bad_header, fmt::format("tensor {} holds non-finite values", name));
            found.emplace(name, Matrix(shape[0], shape[1], std::move(data)));
            expected_offset = offset + nbytes;
        }
        if (expected_offset != payload.size())
            fail(CheckpointErrc::truncated_payload,
                 fmt::format("tensor table covers {} bytes, payload has {}", expected_offset, payload.size()));
    } catch (const json::exception &e) {
        fail(CheckpointErrc::bad_header, std::string("malformed header: ") + e.what());
    } catch (const ConfigError &e) {
        fail(CheckpointErrc::bad_header, e.what());
    }

    const auto take = [&](const std::string &name) {
        auto it = found.find(name);
        if (it == found.end())
            fail(CheckpointErrc::bad_header, "missing tensor " + name);
        Matrix m = std::move(it->second);
        found.erase(it);
        return m;
    };
    const auto &c = layer.config;
    layer.router.weight = take("router.weight");
    const Matrix bias_row = take("router.bias");
    layer.bias.assign(bias_row.data().begin(), bias_row.data().end());
    for (std::size_t i = 0; i < c.n; ++i)
        layer.experts.push_back({take(fmt::format("experts.{}.gate", i)), take(fmt::format("experts.{}.up", i)),
                                 take(fmt::format("experts.{}.down", i))});
    if (layer.is_grove())
        for (std::size_t j = 0; j < c.g; ++j)
            layer.adjugates.push_back({take(fmt::format("adjugates.{}.gate", j)),
                                       take(fmt::format("adjugates.{}.up", j)),
                                       take(fmt::format("adjugates.{}.down", j))});
    if (!found.empty())
        fail(CheckpointErrc::bad_header, "unexpected tensor " + found.begin()->first);
    try {
        layer.validate();
    } catch (const std::exception &e) {
        fail(CheckpointErrc::bad_header, e.what());
    }
    return layer;
}

void save(const GroveLayer &layer, const std::filesystem::path &path, Dtype dtype) {
    const auto bytes = serialize(layer, dtype);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(CheckpointErrc::io, "cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        fail(CheckpointErrc::io, "write to " + path.string() + " failed");
}

GroveLayer load(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(CheckpointErrc::io, "cannot open " + path.string());
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

GroveLayer upcycle(const GroveLayer &moe, const UpcycleOptions &opt) {
    if (moe.is_grove())
        throw std::invalid_argument("upcycle: source is already a grove layer");
    moe.validate();
    GroveLayer out;
    out.kind = LayerKind::grove;
    out.config = moe.config;
    out.config.g = opt.g;
    out.config.h = opt.h;
    out.config.lambda = opt.lambda;
    out.config.init_sigma = opt.init_sigma;
    out.config.seed = opt.seed;
    out.config.validate(LayerKind::grove);

    out.router = moe.router;
    out.experts = moe.experts;
    out.bias = moe.bias.empty() ? Vector(moe.config.n, 0.0) : moe.bias;
    out.origin = "upcycled";

    Rng rng(opt.seed);
    const auto &c = out.config;
    out.adjugates.reserve(c.g);
    for (std::size_t j = 0; j < c.g; ++j) {
        AdjugateExpert a;
        a.gate = normal_init(rng, c.h, c.d, opt.init_sigma);
        a.up = normal_init(rng, c.h, c.d, opt.init_sigma);
        a.down = Matrix(c.d, c.h);
        out.adjugates.push_back(std::move(a));
    }
    return out;
}

} // namespace grove
