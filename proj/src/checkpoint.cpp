#include "lab/checkpoint.hpp"

#include <fstream>

namespace lab {

namespace {

constexpr char kMagic[8] = {'L', 'A', 'B', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model<float>& m,
                     const nlohmann::json& provenance) {
    std::ofstream out(path, std::ios::binary);
    check(out.good(), "cannot open " + path + " for writing");
    nlohmann::json hdr;
    hdr["config"] = m.cfg.to_json();
    hdr["provenance"] = provenance;
    const std::string js = hdr.dump();

    out.write(kMagic, 8);
    write_pod<uint64_t>(out, js.size());
    out.write(js.data(), std::streamsize(js.size()));

    write_pod<uint32_t>(out, uint32_t(m.params.entries.size()));
    for (const auto& e : m.params.entries) {
        write_pod<uint32_t>(out, uint32_t(e.name.size()));
        out.write(e.name.data(), std::streamsize(e.name.size()));
        write_pod<uint32_t>(out, uint32_t(e.value.shape.size()));
        for (const int64_t d : e.value.shape) write_pod<uint64_t>(out, uint64_t(d));
    }
    for (const auto& e : m.params.entries)
        out.write(reinterpret_cast<const char*>(e.value.data.data()),
                  std::streamsize(e.value.data.size() * sizeof(float)));
    check(out.good(), "write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check(in.good(), "cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    check(in.good() && std::equal(magic, magic + 8, kMagic), "not a checkpoint file: " + path);
    const uint64_t len = read_pod<uint64_t>(in);
    std::string js(len, '\0');
    in.read(js.data(), std::streamsize(len));
    const auto hdr = nlohmann::json::parse(js);

    Checkpoint ck;
    ck.model.cfg = ModelConfig::from_json(hdr.at("config"));
    ck.provenance = hdr.value("provenance", nlohmann::json::object());

    const uint32_t count = read_pod<uint32_t>(in);
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = read_pod<uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const uint32_t ndim = read_pod<uint32_t>(in);
        Shape shape(ndim);
        for (auto& d : shape) d = int64_t(read_pod<uint64_t>(in));
        ck.model.params.add(name, shape);
    }
    for (auto& e : ck.model.params.entries)
        in.read(reinterpret_cast<char*>(e.value.data.data()),
                std::streamsize(e.value.data.size() * sizeof(float)));
    check(in.good(), "truncated checkpoint: " + path);
    return ck;
}

}  // namespace lab
