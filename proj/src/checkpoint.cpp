// SPDX-License-Identifier: Apache-2.0
#include "veggie/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "veggie/errors.hpp"

using json = nlohmann::json;

namespace veggie {

namespace {
constexpr char kMagic[8] = {'V', 'G', 'C', 'K', 'P', 'T', '0', '1'};
}

void Checkpoint::save(const std::string& path) const {
    json header;
    header["format"] = "veggie-checkpoint/1";
    header["meta"] = meta;
    header["tensors"] = json::array();
    std::int64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        header["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += t.numel();
    }
    const std::string htxt = header.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open checkpoint for write: " + path);
    f.write(kMagic, 8);
    std::uint64_t hlen = htxt.size();
    f.write(reinterpret_cast<const char*>(&hlen), 8);
    f.write(htxt.data(), static_cast<std::streamsize>(htxt.size()));
    for (const auto& [name, t] : tensors)
        f.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * 8));
    if (!f) throw IoError("checkpoint write failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError("bad checkpoint magic in " + path);
    std::uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 8);
    std::string htxt(hlen, '\0');
    f.read(htxt.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw IoError("truncated checkpoint header in " + path);
    json header = json::parse(htxt);
    if (header.value("format", "") != "veggie-checkpoint/1")
        throw IoError("unsupported checkpoint format in " + path);

    Checkpoint ck;
    ck.meta = header.value("meta", json::object());
    for (const auto& e : header.at("tensors")) {
        std::vector<int> shape = e.at("shape").get<std::vector<int>>();
        Tensor t(shape);
        f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * 8));
        if (!f) throw IoError("truncated tensor data in " + path);
        ck.tensors[e.at("name").get<std::string>()] = std::move(t);
    }
    return ck;
}

}  // namespace veggie
