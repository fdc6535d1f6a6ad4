#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrnn/model.hpp"

namespace mrnn {

// Self-describing binary container: an 8-byte magic, a format version, a
// JSON model description, then named row-major double arrays. Everything is
// written in native byte order; files are byte-reproducible from equal
// parameters.
inline constexpr char kCheckpointMagic[8] = {'M', 'R', 'N', 'N', 'C', 'K', 'P', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t x) {
    os.write(reinterpret_cast<const char*>(&x), sizeof x);
}

inline void put_u64(std::ostream& os, std::uint64_t x) {
    os.write(reinterpret_cast<const char*>(&x), sizeof x);
}

inline std::uint32_t get_u32(std::istream& is) {
    std::uint32_t x;
    if (!is.read(reinterpret_cast<char*>(&x), sizeof x)) {
        throw DataError("checkpoint truncated");
    }
    return x;
}

inline std::uint64_t get_u64(std::istream& is) {
    std::uint64_t x;
    if (!is.read(reinterpret_cast<char*>(&x), sizeof x)) {
        throw DataError("checkpoint truncated");
    }
    return x;
}

inline void put_array(std::ostream& os, const std::string& name, const Tensor& t) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.shape.rank));
    put_u64(os, static_cast<std::uint64_t>(t.shape.rows));
    put_u64(os, static_cast<std::uint64_t>(t.shape.cols));
    os.write(reinterpret_cast<const char*>(t.v.data()),
             static_cast<std::streamsize>(t.v.size() * sizeof(double)));
}

// The array names a given spec must contain, paired with mutable slots.
inline std::vector<std::pair<std::string, Tensor*>> checkpoint_slots(ParamSet& p) {
    std::vector<std::pair<std::string, Tensor*>> out;
    const char* lstm_gates[] = {"f", "i", "c", "o"};
    const char* gru_gates[] = {"z", "r", "h"};
    const long gates = gate_count(p.spec.cell);
    for (long g = 0; g < gates; ++g) {
        std::string suffix = p.spec.cell == CellKind::Lstm    ? lstm_gates[g]
                             : p.spec.cell == CellKind::Gru   ? gru_gates[g]
                                                              : "x";
        out.emplace_back("W_" + suffix, &p.cell.W[g]);
        out.emplace_back("b_" + suffix, &p.cell.b[g]);
    }
    if (p.spec.has_mixture()) {
        if (p.spec.mixture == MixtureSource::Single) {
            out.emplace_back("M", &p.M[0]);
        } else {
            for (std::size_t b = 0; b < p.M.size(); ++b) {
                out.emplace_back("M_" + std::to_string(b + 1), &p.M[b]);
            }
        }
        out.emplace_back("D", &p.D);
        if (p.spec.similarity == Similarity::Mahalanobis) out.emplace_back("L", &p.L);
    }
    out.emplace_back("O_w", &p.head_w);
    if (p.spec.head == HeadKind::Scalar) out.emplace_back("O_b", &p.head_b);
    if (p.spec.embedded) out.emplace_back("E", &p.embedding);
    return out;
}

inline nlohmann::json describe(const ModelSpec& s) {
    nlohmann::json j;
    j["cell"] = cell_name(s.cell);
    j["mixture"] = s.mixture == MixtureSource::None     ? "none"
                   : s.mixture == MixtureSource::Single ? "single"
                                                        : "bucketed";
    j["similarity"] = similarity_name(s.similarity);
    j["head"] = s.head == HeadKind::Scalar ? "scalar" : "softmax";
    j["hidden"] = s.hidden;
    j["input"] = s.input;
    j["proto_dim"] = s.proto_dim;
    j["components"] = s.components;
    j["buckets"] = s.buckets;
    j["vocab"] = s.vocab;
    j["embedded"] = s.embedded;
    return j;
}

inline ModelSpec parse_description(const nlohmann::json& j) {
    ModelSpec s;
    try {
        s.cell = parse_cell(j.at("cell").get<std::string>());
        const std::string mix = j.at("mixture").get<std::string>();
        if (mix == "none") {
            s.mixture = MixtureSource::None;
        } else if (mix == "single") {
            s.mixture = MixtureSource::Single;
        } else if (mix == "bucketed") {
            s.mixture = MixtureSource::Bucketed;
        } else {
            throw DataError("checkpoint description has unknown mixture \"" + mix + "\"");
        }
        s.similarity = parse_similarity(j.at("similarity").get<std::string>());
        const std::string head = j.at("head").get<std::string>();
        if (head == "scalar") {
            s.head = HeadKind::Scalar;
        } else if (head == "softmax") {
            s.head = HeadKind::Softmax;
        } else {
            throw DataError("checkpoint description has unknown head \"" + head + "\"");
        }
        s.hidden = j.at("hidden").get<long>();
        s.input = j.at("input").get<long>();
        s.proto_dim = j.at("proto_dim").get<long>();
        s.components = j.at("components").get<long>();
        s.buckets = j.at("buckets").get<long>();
        s.vocab = j.at("vocab").get<long>();
        s.embedded = j.at("embedded").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint description is malformed: ") + e.what());
    }
    return s;
}

}  // namespace detail

inline void save_checkpoint(const ParamSet& params, std::ostream& os) {
    os.write(kCheckpointMagic, sizeof kCheckpointMagic);
    detail::put_u32(os, kCheckpointVersion);
    const std::string desc = detail::describe(params.spec).dump();
    detail::put_u64(os, desc.size());
    os.write(desc.data(), static_cast<std::streamsize>(desc.size()));
    auto slots = detail::checkpoint_slots(const_cast<ParamSet&>(params));
    detail::put_u64(os, slots.size());
    for (const auto& [name, tensor] : slots) detail::put_array(os, name, *tensor);
    if (!os) {
        throw DataError("checkpoint write failed");
    }
}

inline void save_checkpoint(const ParamSet& params, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw DataError("cannot open " + path + " for writing");
    }
    save_checkpoint(params, f);
}

inline ParamSet load_checkpoint(std::istream& is) {
    char magic[sizeof kCheckpointMagic];
    if (!is.read(magic, sizeof magic) ||
        std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
        throw DataError("not a checkpoint");
    }
    const std::uint32_t version = detail::get_u32(is);
    if (version != kCheckpointVersion) {
        throw DataError("checkpoint format version " + std::to_string(version) +
                        " is not supported (expected " + std::to_string(kCheckpointVersion) +
                        ")");
    }
    const std::uint64_t desc_len = detail::get_u64(is);
    std::string desc(desc_len, '\0');
    if (!is.read(desc.data(), static_cast<std::streamsize>(desc_len))) {
        throw DataError("checkpoint truncated");
    }
    nlohmann::json j = nlohmann::json::parse(desc, nullptr, false);
    if (j.is_discarded()) {
        throw DataError("checkpoint description is not valid JSON");
    }
    ModelSpec spec = detail::parse_description(j);
    spec.validate();

    ParamSet params = init_params(spec, 0);
    auto slots = detail::checkpoint_slots(params);
    std::map<std::string, Tensor*> by_name;
    for (auto& [name, tensor] : slots) by_name[name] = tensor;

    const std::uint64_t count = detail::get_u64(is);
    if (count != slots.size()) {
        throw DataError("checkpoint holds " + std::to_string(count) + " arrays but \"" +
                        spec.name() + "\" needs " + std::to_string(slots.size()));
    }
    for (std::uint64_t k = 0; k < count; ++k) {
        const std::uint32_t name_len = detail::get_u32(is);
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) {
            throw DataError("checkpoint truncated");
        }
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw DataError("checkpoint array \"" + name + "\" does not belong to \"" +
                            spec.name() + "\"");
        }
        Shape shape;
        shape.rank = static_cast<int>(detail::get_u32(is));
        shape.rows = static_cast<long>(detail::get_u64(is));
        shape.cols = static_cast<long>(detail::get_u64(is));
        Tensor* slot = it->second;
        if (!(shape == slot->shape)) {
            throw DataError("checkpoint array \"" + name + "\" is " + shape.str() +
                            " but the description implies " + slot->shape.str());
        }
        if (!is.read(reinterpret_cast<char*>(slot->v.data()),
                     static_cast<std::streamsize>(slot->v.size() * sizeof(double)))) {
            throw DataError("checkpoint truncated");
        }
        by_name.erase(it);
    }
    return params;
}

inline ParamSet load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw DataError("cannot open checkpoint " + path);
    }
    return load_checkpoint(f);
}

}  // namespace mrnn
